//! Desk-scale soft-labeled contrastive pre-training for function-level code
//! representation.
//!
//! The pipeline, end to end:
//!
//! 1. [`syntax`] parses an indentation-sensitive Python subset into concrete
//!    syntax trees with byte spans.
//! 2. [`pairgen`] builds positive training pairs from function records:
//!    docstring/code pairs, syntax-subtree extraction, semantics-preserving
//!    transforms, and inverse-cloze splits.
//! 3. [`autodiff`] is a minimal reverse-mode tape over dense tensors.
//! 4. [`encoder`] tokenizes text/code and runs small Transformer encoders: a
//!    dual encoder for retrieval scoring plus discriminators that judge
//!    (anchor, candidate) pairs jointly.
//! 5. [`training`] runs warm-up contrastive training followed by iterative
//!    adversarial rounds: mine hard negatives with the dual encoder, train the
//!    discriminators on them, then train the dual encoder against the
//!    discriminators' soft labels.
//! 6. [`eval`] provides brute-force retrieval evaluation (MRR, MAP@R) and a
//!    deterministic toy corpus generator for end-to-end tests.
//!
//! All numeric kernels are generic over [`Scalar`] (any `num-traits` float);
//! the pipeline itself is fixed to `f64` via the aliases at the crate root
//! ([`Tensor`], [`Tape`], [`ParamSet`]) so that training trajectories are
//! reproducible bit-for-bit.

pub mod autodiff;
pub mod encoder;
pub mod eval;
pub mod jsonl;
pub mod pairgen;
pub mod rng;
mod scalar;
pub mod syntax;
pub mod training;

pub use scalar::Scalar;

/// Dense tensor over `f64`, the pipeline's working precision.
pub type Tensor = autodiff::Tensor<f64>;
/// Reverse-mode tape over `f64`.
pub type Tape = autodiff::Tape<f64>;
/// Named parameter collection over `f64`.
pub type ParamSet = autodiff::ParamSet<f64>;
