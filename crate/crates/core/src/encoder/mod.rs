//! Dual-encoder and discriminator models.
//!
//! All three scoring functions share one architecture: token + position
//! embeddings into a pre-norm transformer (multi-head self-attention that
//! honors the PAD mask, GELU MLP), a final layer norm, and a mean pool over
//! non-PAD positions (CLS is a real position and joins the mean). The
//! dual-encoder scores a pair by the dot product of two pooled vectors;
//! a discriminator encodes the concatenation `[CLS] x [SEP] y` and applies
//! a scoring vector.
//!
//! PAD can never leak into the output: PAD keys receive a `-1e9` additive
//! attention bias (their softmax mass underflows to exactly zero) and PAD
//! rows are excluded from the mean pool, so appending padding leaves the
//! encoding bit-identical.

pub mod vocab;

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{AutodiffError, Gradients, ParamSet, Tape, Tensor, Var};
use crate::rng::rng_for;
use crate::Scalar;

pub use vocab::{
    subtokens, tokenize, tokenize_pair, TokenSeq, Vocab, VocabError, CLS_ID, EXTRACTED_ID,
    PAD_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID,
};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("BadConfig: {message}")]
    BadConfig { message: String },
    #[error("MissingHead: this parameter set has no scoring vector; only discriminators score concatenated pairs")]
    MissingHead,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Architecture hyperparameters shared by the dual encoder and both
/// discriminators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    /// Hidden width; must be divisible by `heads`.
    pub d: usize,
    /// Transformer layer count.
    pub layers: usize,
    /// Attention head count.
    pub heads: usize,
    /// Hard cap on sequence length (positions are learned embeddings).
    pub max_len: usize,
    /// Vocabulary capacity, including the five reserved tokens.
    pub vocab_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { d: 64, layers: 2, heads: 4, max_len: 128, vocab_size: 4096 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |message: String| Err(EncoderError::BadConfig { message });
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!("d={} must be a positive multiple of heads={}", self.d, self.heads));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.max_len < 2 {
            return fail(format!("max_len={} must be at least 2", self.max_len));
        }
        if self.vocab_size < SPECIAL_TOKENS.len() {
            return fail(format!(
                "vocab_size={} cannot hold the {} reserved tokens",
                self.vocab_size,
                SPECIAL_TOKENS.len()
            ));
        }
        Ok(())
    }
}

enum Init {
    Uniform,
    Zeros,
    Ones,
}

/// Parameter names with shapes and init policy, in a fixed order so that the
/// same seed always produces the same initialization.
fn param_specs(cfg: &EncoderConfig, with_head: bool) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d;
    let hidden = 4 * d;
    let mut specs: Vec<(String, Vec<usize>, Init)> = vec![
        ("emb/token".into(), vec![cfg.vocab_size, d], Init::Uniform),
        ("emb/pos".into(), vec![cfg.max_len, d], Init::Uniform),
    ];
    for l in 0..cfg.layers {
        let p = |s: &str| format!("l{l}/{s}");
        specs.push((p("ln1/gamma"), vec![d], Init::Ones));
        specs.push((p("ln1/beta"), vec![d], Init::Zeros));
        for w in ["wq", "wk", "wv", "wo"] {
            specs.push((p(&format!("attn/{w}")), vec![d, d], Init::Uniform));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            specs.push((p(&format!("attn/{b}")), vec![d], Init::Zeros));
        }
        specs.push((p("ln2/gamma"), vec![d], Init::Ones));
        specs.push((p("ln2/beta"), vec![d], Init::Zeros));
        specs.push((p("mlp/w1"), vec![d, hidden], Init::Uniform));
        specs.push((p("mlp/b1"), vec![hidden], Init::Zeros));
        specs.push((p("mlp/w2"), vec![hidden, d], Init::Uniform));
        specs.push((p("mlp/b2"), vec![d], Init::Zeros));
    }
    specs.push(("ln_f/gamma".into(), vec![d], Init::Ones));
    specs.push(("ln_f/beta".into(), vec![d], Init::Zeros));
    if with_head {
        specs.push(("head/w".into(), vec![d], Init::Uniform));
    }
    specs
}

/// One complete parameter set (dual encoder or a discriminator). The three
/// sets used in training are independent values; updating one cannot touch
/// the others.
#[derive(Debug, Clone)]
pub struct EncoderParams<F = f64> {
    pub cfg: EncoderConfig,
    pub params: ParamSet<F>,
    /// Discriminators carry a scoring vector `head/w`; the dual encoder
    /// does not.
    pub has_head: bool,
}

impl<F: Scalar> EncoderParams<F> {
    /// Fresh parameters: matrices, embeddings and the scoring vector drawn
    /// uniformly from ±0.05, biases and layer-norm shifts zero, layer-norm
    /// gains one.
    pub fn init(cfg: EncoderConfig, seed: u64, with_head: bool) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let mut rng = rng_for(seed, "encoder/init", &[]);
        let mut params = ParamSet::new();
        for (name, shape, init) in param_specs(&cfg, with_head) {
            let n: usize = shape.iter().product();
            let data: Vec<F> = match init {
                Init::Uniform => {
                    (0..n).map(|_| F::lit(rng.gen_range(-0.05..=0.05))).collect()
                }
                Init::Zeros => vec![F::zero(); n],
                Init::Ones => vec![F::one(); n],
            };
            params.insert(name, Tensor::from_vec(&shape, data).expect("spec shape"));
        }
        Ok(EncoderParams { cfg, params, has_head: with_head })
    }

    /// Pooled encoding of one sequence (no gradients retained).
    pub fn encode(&self, seq: &TokenSeq) -> Result<Vec<F>, EncoderError> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let pooled = encode_on_tape(&mut tape, &bound, &self.cfg, seq)?;
        Ok(tape.value(pooled).data().to_vec())
    }

    /// Final hidden states `[len, d]` alongside the pooled vector; the pool
    /// is the mean of the rows where `mask == 1`.
    pub fn encode_states(&self, seq: &TokenSeq) -> Result<(Tensor<F>, Vec<F>), EncoderError> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let (hidden, pooled) = forward_on_tape(&mut tape, &bound, &self.cfg, seq)?;
        Ok((tape.value(hidden).clone(), tape.value(pooled).data().to_vec()))
    }
}

/// Tape handles for every parameter of a set, so a loss builder can wire
/// gradients back by name.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unbound parameter {name:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Records every parameter of `params` as a tape input.
pub fn bind<F: Scalar>(tape: &mut Tape<F>, params: &ParamSet<F>) -> Bound {
    let mut vars = BTreeMap::new();
    for (name, tensor) in params.iter() {
        vars.insert(name.clone(), tape.input(tensor));
    }
    Bound { vars }
}

/// Moves gradients from a backward pass into the grad buffers of `params`,
/// matched by parameter name. Parameters the loss never touched are left
/// without a buffer.
pub fn apply_grads<F: Scalar>(bound: &Bound, grads: &Gradients<F>, params: &mut ParamSet<F>) {
    for (name, &var) in bound.iter() {
        if let Some(g) = grads.get(var) {
            params.get_mut(name).accumulate_grad(g);
        }
    }
}

/// Full forward pass; returns the final hidden states `[len, d]` and the
/// masked mean pool `[d]`.
fn forward_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &Bound,
    cfg: &EncoderConfig,
    seq: &TokenSeq,
) -> Result<(Var, Var), AutodiffError> {
    debug_assert_eq!(seq.ids.len(), seq.mask.len(), "ids and mask must align");
    let t_len = seq.ids.len();
    let tok = tape.embedding_lookup(bound.var("emb/token"), &seq.ids)?;
    let positions: Vec<usize> = (0..t_len).collect();
    let pos = tape.embedding_lookup(bound.var("emb/pos"), &positions)?;
    let mut x = tape.add(tok, pos)?;

    // Additive attention bias: -1e9 on PAD key columns makes their softmax
    // mass underflow to exactly zero, so padding cannot reach real rows.
    let neg = F::lit(-1e9);
    let mut bias = vec![F::zero(); t_len * t_len];
    for (j, &m) in seq.mask.iter().enumerate() {
        if m == 0 {
            for i in 0..t_len {
                bias[i * t_len + j] = neg;
            }
        }
    }
    let attn_bias = tape.constant_from(&[t_len, t_len], bias)?;

    let dh = cfg.d / cfg.heads;
    let scale = F::lit(1.0 / (dh as f64).sqrt());
    for l in 0..cfg.layers {
        let p = |s: &str| format!("l{l}/{s}");

        let h1 = tape.layer_norm(x, bound.var(&p("ln1/gamma")), bound.var(&p("ln1/beta")))?;
        let q = tape.matmul(h1, bound.var(&p("attn/wq")))?;
        let q = tape.add_bias(q, bound.var(&p("attn/bq")))?;
        let k = tape.matmul(h1, bound.var(&p("attn/wk")))?;
        let k = tape.add_bias(k, bound.var(&p("attn/bk")))?;
        let v = tape.matmul(h1, bound.var(&p("attn/wv")))?;
        let v = tape.add_bias(v, bound.var(&p("attn/bv")))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for hi in 0..cfg.heads {
            let qs = tape.slice_cols(q, hi * dh, dh)?;
            let ks = tape.slice_cols(k, hi * dh, dh)?;
            let vs = tape.slice_cols(v, hi * dh, dh)?;
            let raw = tape.matmul_t(qs, ks)?;
            let scaled = tape.scale(raw, scale);
            let masked = tape.add(scaled, attn_bias)?;
            let probs = tape.softmax_rows(masked)?;
            heads.push(tape.matmul(probs, vs)?);
        }
        let ctx = tape.concat_cols(&heads)?;
        let proj = tape.matmul(ctx, bound.var(&p("attn/wo")))?;
        let attn_out = tape.add_bias(proj, bound.var(&p("attn/bo")))?;
        x = tape.add(x, attn_out)?;

        let h2 = tape.layer_norm(x, bound.var(&p("ln2/gamma")), bound.var(&p("ln2/beta")))?;
        let m = tape.matmul(h2, bound.var(&p("mlp/w1")))?;
        let m = tape.add_bias(m, bound.var(&p("mlp/b1")))?;
        let m = tape.gelu(m);
        let m = tape.matmul(m, bound.var(&p("mlp/w2")))?;
        let m = tape.add_bias(m, bound.var(&p("mlp/b2")))?;
        x = tape.add(x, m)?;
    }
    let hidden = tape.layer_norm(x, bound.var("ln_f/gamma"), bound.var("ln_f/beta"))?;
    let pooled = tape.masked_mean_pool(hidden, &seq.mask)?;
    Ok((hidden, pooled))
}

/// Pooled encoding `[d]` of one sequence on an existing tape.
pub fn encode_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &Bound,
    cfg: &EncoderConfig,
    seq: &TokenSeq,
) -> Result<Var, AutodiffError> {
    forward_on_tape(tape, bound, cfg, seq).map(|(_, pooled)| pooled)
}

/// Discriminator score of an already concatenated pair on an existing tape:
/// the scoring vector dotted with the pooled encoding.
pub fn disc_score_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &Bound,
    cfg: &EncoderConfig,
    seq: &TokenSeq,
) -> Result<Var, AutodiffError> {
    let pooled = encode_on_tape(tape, bound, cfg, seq)?;
    tape.dot(pooled, bound.var("head/w"))
}

/// Pooled encodings for many texts, in input order. Items are independent,
/// so this parallelizes across the configured rayon pool; the result does
/// not depend on thread count.
pub fn encode_batch<F: Scalar>(
    model: &EncoderParams<F>,
    vocab: &Vocab,
    texts: &[String],
) -> Result<Vec<Vec<F>>, EncoderError> {
    use rayon::prelude::*;
    texts
        .par_iter()
        .map(|t| model.encode(&tokenize(t, vocab, model.cfg.max_len)))
        .collect()
}

/// Dual-encoder score: dot product of the two pooled encodings. Symmetric
/// by construction.
pub fn dual_score<F: Scalar>(
    model: &EncoderParams<F>,
    vocab: &Vocab,
    x: &str,
    y: &str,
) -> Result<F, EncoderError> {
    let ex = model.encode(&tokenize(x, vocab, model.cfg.max_len))?;
    let ey = model.encode(&tokenize(y, vocab, model.cfg.max_len))?;
    Ok(ex.iter().zip(&ey).map(|(&a, &b)| a * b).sum())
}

/// Discriminator score of `[CLS] x [SEP] y`; order matters. For text-code
/// pairs `x` is the text; for code-code pairs `x` is the anchor code.
pub fn disc_score<F: Scalar>(
    model: &EncoderParams<F>,
    vocab: &Vocab,
    x: &str,
    y: &str,
) -> Result<F, EncoderError> {
    if !model.has_head {
        return Err(EncoderError::MissingHead);
    }
    let seq = tokenize_pair(x, y, vocab, model.cfg.max_len);
    let pooled = model.encode(&seq)?;
    let w = model.params.get("head/w");
    Ok(pooled.iter().zip(w.data()).map(|(&a, &b)| a * b).sum())
}
