//! The four training losses, built on the autodiff tape.
//!
//! - warm-up: in-batch contrastive cross-entropy for the dual encoder;
//! - discriminator: NLL of the positive among sampled negatives;
//! - adversarial: negative-only softmax weighted by per-negative constants
//!   taken from the discriminator;
//! - distillation: KL from the discriminator's soft label to the dual
//!   encoder's distribution over the positive plus negatives.

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::{
    disc_score, disc_score_on_tape, encode_on_tape, tokenize_pair, Bound, EncoderConfig,
    EncoderParams, TokenSeq, Vocab,
};
use crate::Scalar;

use super::{SoftLabel, TrainError};

/// In-batch contrastive loss: every other positive in the batch serves as a
/// negative. Batch scores form a `b × b` matrix of dual scores; the loss is
/// the mean NLL of the diagonal under row softmax.
pub fn warmup_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &Bound,
    cfg: &EncoderConfig,
    anchors: &[TokenSeq],
    positives: &[TokenSeq],
) -> Result<Var, TrainError> {
    let b = anchors.len();
    if b < 2 || positives.len() != b {
        return Err(TrainError::BatchTooSmall { anchors: b, positives: positives.len() });
    }
    let mut ea = Vec::with_capacity(b);
    let mut ep = Vec::with_capacity(b);
    for seq in anchors {
        ea.push(encode_on_tape(tape, bound, cfg, seq)?);
    }
    for seq in positives {
        ep.push(encode_on_tape(tape, bound, cfg, seq)?);
    }
    let a = tape.concat_rows(&ea)?; // [b, d]
    let p = tape.concat_rows(&ep)?; // [b, d]
    let logits = tape.matmul_t(a, p)?; // [b, b]
    in_batch_ce(tape, logits, b)
}

/// Cross-entropy of a square logit matrix against the identity target.
pub(crate) fn in_batch_ce<F: Scalar>(
    tape: &mut Tape<F>,
    logits: Var,
    b: usize,
) -> Result<Var, TrainError> {
    let mut eye = vec![F::zero(); b * b];
    for i in 0..b {
        eye[i * b + i] = F::one();
    }
    let target = Tensor::from_vec(&[b, b], eye).expect("square one-hot target");
    Ok(tape.cross_entropy_soft(logits, &target)?)
}

/// Discriminator loss for one anchor: NLL of the positive under softmax of
/// concatenation scores over `{positive} ∪ negatives`.
pub fn discriminator_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &Bound,
    cfg: &EncoderConfig,
    vocab: &Vocab,
    anchor: &str,
    positive: &str,
    negatives: &[&str],
) -> Result<Var, TrainError> {
    if negatives.is_empty() {
        return Err(TrainError::EmptyNegatives);
    }
    let mut scores = Vec::with_capacity(1 + negatives.len());
    for y in std::iter::once(positive).chain(negatives.iter().copied()) {
        let seq = tokenize_pair(anchor, y, vocab, cfg.max_len);
        scores.push(disc_score_on_tape(tape, bound, cfg, &seq)?);
    }
    let logits = tape.concat_rows(&scores)?; // [1 + n]
    let mut one_hot = vec![F::zero(); scores.len()];
    one_hot[0] = F::one();
    let target = Tensor::from_vec(&[scores.len()], one_hot).expect("one-hot target");
    Ok(tape.cross_entropy_soft(logits, &target)?)
}

/// Discriminator scores of one anchor against each candidate, without
/// gradient tracking. Candidate order is preserved.
pub fn disc_scores<F: Scalar>(
    disc: &EncoderParams<F>,
    vocab: &Vocab,
    anchor: &str,
    candidates: &[&str],
) -> Result<Vec<F>, TrainError> {
    candidates.iter().map(|y| Ok(disc_score(disc, vocab, anchor, y)?)).collect()
}

/// `ln(1 + e^z)`, computed without overflow for large `|z|`.
fn softplus<F: Scalar>(z: F) -> F {
    if z > F::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Per-negative weight from a two-way contest: the negative log probability
/// the discriminator assigns the positive against this single negative.
/// Always ≥ 0; `ln 2` at equal scores; → 0 as the positive dominates.
pub fn adversarial_weight_from_scores<F: Scalar>(pos_score: F, neg_score: F) -> F {
    softplus(neg_score - pos_score)
}

/// [`adversarial_weight_from_scores`] on freshly computed discriminator
/// scores. The weight is a plain value: no gradient flows back into the
/// discriminator or the dual encoder through it.
pub fn adversarial_weight<F: Scalar>(
    disc: &EncoderParams<F>,
    vocab: &Vocab,
    anchor: &str,
    positive: &str,
    negative: &str,
) -> Result<F, TrainError> {
    let sp = disc_score(disc, vocab, anchor, positive)?;
    let sn = disc_score(disc, vocab, anchor, negative)?;
    Ok(adversarial_weight_from_scores(sp, sn))
}

/// Soft label over `{positive} ∪ negatives`: softmax of the discriminator's
/// concatenation scores, positive first.
pub fn soft_label<F: Scalar>(
    disc: &EncoderParams<F>,
    vocab: &Vocab,
    anchor: &str,
    positive: &str,
    negatives: &[&str],
) -> Result<SoftLabel<F>, TrainError> {
    if negatives.is_empty() {
        return Err(TrainError::EmptyNegatives);
    }
    let mut candidates = Vec::with_capacity(1 + negatives.len());
    candidates.push(positive);
    candidates.extend_from_slice(negatives);
    let scores = disc_scores(disc, vocab, anchor, &candidates)?;
    Ok(SoftLabel::from_scores(&scores))
}

/// Dual-encoder loss for one anchor: `λ` times the adversarially weighted
/// negative-only term plus `1 − λ` times the distillation term.
///
/// The weighted term softmaxes dual scores over the negatives ONLY and sums
/// `−w · log p` with the precomputed constants `weights`. The distillation
/// term is `KL(soft ‖ p)` over `{positive} ∪ negatives`, so it is ≥ 0 and
/// vanishes exactly when the dual encoder matches the soft label.
pub fn dual_encoder_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &Bound,
    cfg: &EncoderConfig,
    anchor: &TokenSeq,
    positive: &TokenSeq,
    negatives: &[TokenSeq],
    weights: &[F],
    soft: &SoftLabel<F>,
    lambda: f64,
) -> Result<Var, TrainError> {
    if negatives.is_empty() {
        return Err(TrainError::EmptyNegatives);
    }
    debug_assert_eq!(weights.len(), negatives.len(), "one weight per negative");
    debug_assert_eq!(soft.probs().len(), negatives.len() + 1, "soft label covers {{x⁺}} ∪ X⁻");
    let n = negatives.len();

    let ea = encode_on_tape(tape, bound, cfg, anchor)?;
    let ep = encode_on_tape(tape, bound, cfg, positive)?;
    let mut sns = Vec::with_capacity(n);
    for seq in negatives {
        let en = encode_on_tape(tape, bound, cfg, seq)?;
        sns.push(tape.dot(ea, en)?);
    }
    let sp = tape.dot(ea, ep)?;

    // Weighted negative-only term.
    let neg_logits = tape.concat_rows(&sns)?; // [n]
    let probs = tape.softmax_rows(neg_logits)?;
    let logp = tape.log(probs);
    let w = tape.constant_from(&[n], weights.to_vec())?;
    let weighted = tape.dot(logp, w)?;
    let adv = tape.scale(weighted, F::lit(-1.0));

    // Distillation term: cross-entropy minus the soft label's own entropy.
    let mut full = Vec::with_capacity(n + 1);
    full.push(sp);
    full.extend_from_slice(&sns);
    let full_logits = tape.concat_rows(&full)?; // [n + 1]
    let target = Tensor::from_vec(&[n + 1], soft.probs().to_vec()).expect("soft label length");
    let ce = tape.cross_entropy_soft(full_logits, &target)?;
    let neg_entropy = tape.constant(Tensor::scalar(-entropy(soft.probs())));
    let distill = tape.add(ce, neg_entropy)?;

    let a = tape.scale(adv, F::lit(lambda));
    let d = tape.scale(distill, F::lit(1.0 - lambda));
    Ok(tape.add(a, d)?)
}

fn entropy<F: Scalar>(p: &[F]) -> F {
    let mut h = F::zero();
    for &x in p {
        if x > F::zero() {
            h = h - x * x.ln();
        }
    }
    h
}
