//! Soft-labeled contrastive pre-training.
//!
//! The schedule has two stages. A warm-up stage trains the dual encoder
//! with in-batch negatives. Then, for a configured number of iterations:
//! discriminators learn to pick the true positive out of mined hard
//! negatives; the dual encoder learns from the discriminators through
//! per-negative adversarial weights and a soft-label distillation target;
//! and the hard-negative pool is refreshed with the updated dual encoder.
//!
//! Everything is keyed to one seed: batch selection, negative sampling and
//! initialization derive independent streams from it, so a run is fully
//! reproducible, including its metrics log.

mod losses;

use std::fmt;
use std::path::{Path, PathBuf};

use crate::autodiff::{
    save_checkpoint, AdamW, AdamWConfig, AutodiffError, CheckpointError, Tape,
};
use crate::encoder::{
    bind, encode_batch, tokenize, EncoderConfig, EncoderError, EncoderParams, TokenSeq, Vocab,
};
use crate::pairgen::{strip_docstring, AnchorKind, FunctionRecord, PositivePair};
use crate::rng::{fnv1a, derive_seed, rng_for};
use crate::Scalar;

pub use losses::{
    adversarial_weight, adversarial_weight_from_scores, disc_scores, discriminator_loss_on_tape,
    dual_encoder_loss_on_tape, soft_label, warmup_loss_on_tape,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("BadConfig: {message}")]
    BadConfig { message: String },
    #[error("EmptyInput: {what} must be non-empty")]
    EmptyInput { what: &'static str },
    #[error("BatchTooSmall: warm-up needs at least 2 aligned pairs, got {anchors} anchors / {positives} positives")]
    BatchTooSmall { anchors: usize, positives: usize },
    #[error("CorpusTooSmall: {available} eligible candidates, but top_k={top_k} are required")]
    CorpusTooSmall { available: usize, top_k: usize },
    #[error("PoolTooSmall: pool row holds {have} candidates, need {need}")]
    PoolTooSmall { have: usize, need: usize },
    #[error("EmptyNegatives: at least one negative is required")]
    EmptyNegatives,
    #[error("BadSoftLabel: entries must be ≥ 0 and sum to 1 ± 1e-9 (sum = {sum})")]
    BadSoftLabel { sum: f64 },
    #[error("NumericalDivergence: non-finite loss {loss} at step {step} ({phase} phase)")]
    NumericalDivergence { step: u64, phase: Phase, loss: f64 },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Schedule and optimization hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// Mix between the adversarially weighted term (`lambda`) and the
    /// distillation term (`1 - lambda`).
    pub lambda: f64,
    /// Adversarial iterations after warm-up; 0 stops at the warm-up model.
    pub iterations: usize,
    /// Negatives sampled per anchor each step.
    pub negative_size: usize,
    /// Hard-negative pool depth per anchor.
    pub top_k: usize,
    /// Anchors per optimization step.
    pub batch_size: usize,
    pub lr_dual: f64,
    pub lr_disc: f64,
    pub warmup_steps: usize,
    /// Discriminator steps per iteration.
    pub disc_steps: usize,
    /// Dual-encoder steps per iteration.
    pub dual_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.2,
            iterations: 4,
            negative_size: 7,
            top_k: 50,
            batch_size: 8,
            lr_dual: 3e-4,
            lr_disc: 1e-3,
            warmup_steps: 500,
            disc_steps: 100,
            dual_steps: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |message: String| Err(TrainError::BadConfig { message });
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda={} must lie in [0, 1]", self.lambda));
        }
        if self.negative_size == 0 || self.top_k == 0 || self.negative_size > self.top_k {
            return fail(format!(
                "need 1 ≤ negative_size ≤ top_k, got negative_size={} top_k={}",
                self.negative_size, self.top_k
            ));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size={} must be at least 2", self.batch_size));
        }
        if self.warmup_steps == 0 || self.disc_steps == 0 || self.dual_steps == 0 {
            return fail("warmup_steps, disc_steps and dual_steps must all be ≥ 1".into());
        }
        if !(self.lr_dual > 0.0) || !(self.lr_disc > 0.0) {
            return fail(format!(
                "learning rates must be positive, got lr_dual={} lr_disc={}",
                self.lr_dual, self.lr_disc
            ));
        }
        Ok(())
    }
}

/// Which stage of the schedule produced a metrics row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Disc,
    Dual,
    Refresh,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Warmup => "warmup",
            Phase::Disc => "disc",
            Phase::Dual => "dual",
            Phase::Refresh => "refresh",
        };
        f.write_str(s)
    }
}

/// One metrics log entry. Refresh rows carry a loss of 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub phase: Phase,
    pub loss: f64,
    pub lambda: f64,
    pub iteration: usize,
}

pub const METRICS_HEADER: &str = "step,phase,loss,lambda,iteration";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.phase, self.loss, self.lambda, self.iteration)
    }
}

/// Renders the full metrics log as CSV, header included.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(32 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

/// Per-anchor hard-negative candidates: `(corpus id, dual score)` with
/// scores non-increasing and ties broken by ascending id. The anchor's
/// positive — and any byte-exact duplicate of it — never appears.
#[derive(Debug, Clone, PartialEq)]
pub struct HardNegativePool {
    rows: Vec<Vec<(usize, f64)>>,
}

impl HardNegativePool {
    pub fn row(&self, anchor: usize) -> &[(usize, f64)] {
        &self.rows[anchor]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// A distribution over `{positive} ∪ negatives`, positive first.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel<F>(Vec<F>);

impl<F: Scalar> SoftLabel<F> {
    pub fn new(probs: Vec<F>) -> Result<Self, TrainError> {
        if probs.is_empty() {
            return Err(TrainError::EmptyInput { what: "soft label" });
        }
        let sum: f64 = probs.iter().map(|p| p.as_f64()).sum();
        let nonneg = probs.iter().all(|p| p.as_f64() >= -1e-12);
        if (sum - 1.0).abs() > 1e-9 || !nonneg {
            return Err(TrainError::BadSoftLabel { sum });
        }
        Ok(SoftLabel(probs))
    }

    /// Softmax of raw scores; always a valid distribution.
    pub fn from_scores(scores: &[F]) -> SoftLabel<F> {
        let mx = scores.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
        let exps: Vec<F> = scores.iter().map(|&x| (x - mx).exp()).collect();
        let z: F = exps.iter().copied().sum();
        SoftLabel(exps.into_iter().map(|e| e / z).collect())
    }

    pub fn probs(&self) -> &[F] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Top-`top_k` corpus candidates per anchor by dot product, from
/// precomputed embeddings. `exclude(anchor, candidate)` removes forbidden
/// candidates (the positive and its byte-duplicates) before ranking.
pub fn mine_from_embeddings<F: Scalar>(
    anchor_vecs: &[Vec<F>],
    corpus_vecs: &[Vec<F>],
    top_k: usize,
    exclude: impl Fn(usize, usize) -> bool,
) -> Result<HardNegativePool, TrainError> {
    let mut rows = Vec::with_capacity(anchor_vecs.len());
    for (ai, a) in anchor_vecs.iter().enumerate() {
        let mut scored: Vec<(usize, f64)> = corpus_vecs
            .iter()
            .enumerate()
            .filter(|(ci, _)| !exclude(ai, *ci))
            .map(|(ci, c)| {
                let s: F = a.iter().zip(c).map(|(&x, &y)| x * y).sum();
                (ci, s.as_f64())
            })
            .collect();
        if scored.len() < top_k {
            return Err(TrainError::CorpusTooSmall { available: scored.len(), top_k });
        }
        scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        scored.truncate(top_k);
        rows.push(scored);
    }
    Ok(HardNegativePool { rows })
}

/// Mines hard negatives for every pair: embeds anchors and the code corpus
/// with the current dual encoder, ranks by dot product, and drops any
/// candidate byte-equal to the anchor's positive.
pub fn mine_hard_negatives<F: Scalar>(
    model: &EncoderParams<F>,
    vocab: &Vocab,
    pairs: &[PositivePair],
    corpus_codes: &[String],
    top_k: usize,
) -> Result<HardNegativePool, TrainError> {
    if corpus_codes.len() <= top_k {
        return Err(TrainError::CorpusTooSmall { available: corpus_codes.len(), top_k });
    }
    let anchor_texts: Vec<String> = pairs.iter().map(|p| p.anchor.clone()).collect();
    let anchors = encode_batch(model, vocab, &anchor_texts)?;
    let corpus = encode_batch(model, vocab, corpus_codes)?;
    mine_from_embeddings(&anchors, &corpus, top_k, |ai, ci| {
        corpus_codes[ci] == pairs[ai].positive
    })
}

/// Uniform sample of `negative_size` candidate ids from a pool row, without
/// replacement, deterministic per `(seed, step, anchor_id)`.
pub fn sample_negatives(
    row: &[(usize, f64)],
    negative_size: usize,
    seed: u64,
    step: u64,
    anchor_id: &str,
) -> Result<Vec<usize>, TrainError> {
    if row.len() < negative_size {
        return Err(TrainError::PoolTooSmall { have: row.len(), need: negative_size });
    }
    let mut rng = rng_for(seed, "training/negatives", &[step, fnv1a(anchor_id.as_bytes())]);
    let picks = rand::seq::index::sample(&mut rng, row.len(), negative_size);
    Ok(picks.iter().map(|i| row[i].0).collect())
}

/// The code strings used for mining and retrieval pools: record bodies with
/// their docstrings stripped, matching the representation of comment-pair
/// positives so byte-exact duplicate exclusion works.
pub fn mining_corpus(records: &[FunctionRecord]) -> Vec<String> {
    records.iter().map(|r| strip_docstring(&r.code).0).collect()
}

/// Where and how to run the schedule.
#[derive(Debug, Clone)]
pub struct PretrainOptions {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    /// When set, checkpoints, the metrics CSV, the vocabulary and a config
    /// echo are written here (the directory is created if missing).
    pub out_dir: Option<PathBuf>,
    /// Checkpoint file stem; iteration N is saved as `<name>.iterN`, the
    /// final state as `<name>.final`.
    pub name: String,
}

impl PretrainOptions {
    pub fn new(encoder: EncoderConfig, train: TrainConfig) -> Self {
        PretrainOptions { encoder, train, out_dir: None, name: "model".into() }
    }
}

/// Everything a finished run produces. The dual encoder is the artifact
/// used downstream; the discriminators are returned for inspection.
#[derive(Debug, Clone)]
pub struct PretrainOutput<F = f64> {
    pub dual: EncoderParams<F>,
    pub disc_text: EncoderParams<F>,
    pub disc_code: EncoderParams<F>,
    pub vocab: Vocab,
    pub metrics: Vec<MetricsRow>,
}

struct Logger {
    rows: Vec<MetricsRow>,
    step: u64,
    lambda: f64,
}

impl Logger {
    fn record(&mut self, phase: Phase, loss: f64, iteration: usize) -> Result<u64, TrainError> {
        self.step += 1;
        self.rows.push(MetricsRow { step: self.step, phase, loss, lambda: self.lambda, iteration });
        if !loss.is_finite() {
            return Err(TrainError::NumericalDivergence { step: self.step, phase, loss });
        }
        Ok(self.step)
    }
}

fn pick_batch(seed: u64, tag_counters: &[u64], len: usize, want: usize) -> Vec<usize> {
    let mut rng = rng_for(seed, "training/batch", tag_counters);
    rand::seq::index::sample(&mut rng, len, want.min(len)).into_vec()
}

fn write_text(path: &Path, text: &str) -> Result<(), TrainError> {
    std::fs::write(path, text)
        .map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
}

/// Runs the full schedule: warm-up, initial mining, then per iteration a
/// discriminator phase, a dual-encoder phase and a pool refresh, with a
/// checkpoint per iteration. Aborts with `NumericalDivergence` the moment
/// any logged loss is non-finite.
pub fn run_pretraining<F: Scalar>(
    records: &[FunctionRecord],
    pairs: &[PositivePair],
    opts: &PretrainOptions,
) -> Result<PretrainOutput<F>, TrainError> {
    opts.encoder.validate()?;
    opts.train.validate()?;
    if records.is_empty() {
        return Err(TrainError::EmptyInput { what: "records" });
    }
    if pairs.is_empty() {
        return Err(TrainError::EmptyInput { what: "pairs" });
    }
    let cfg = opts.train;
    let enc = opts.encoder;

    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|source| TrainError::Io { path: dir.clone(), source })?;
    }

    // Vocabulary covers corpus code, docstrings and every pair text.
    let corpus_codes = mining_corpus(records);
    let mut vocab_texts: Vec<&str> = Vec::new();
    for r in records {
        vocab_texts.push(&r.code);
        if let Some(d) = &r.docstring {
            vocab_texts.push(d);
        }
    }
    for p in pairs {
        vocab_texts.push(&p.anchor);
        vocab_texts.push(&p.positive);
    }
    let vocab = Vocab::build(vocab_texts.iter().copied(), enc.vocab_size);

    let mut dual =
        EncoderParams::<F>::init(enc, derive_seed(cfg.seed, "train/init-dual", &[]), false)?;
    let mut disc_text =
        EncoderParams::<F>::init(enc, derive_seed(cfg.seed, "train/init-disc-text", &[]), true)?;
    let mut disc_code =
        EncoderParams::<F>::init(enc, derive_seed(cfg.seed, "train/init-disc-code", &[]), true)?;

    let adam = |lr: f64| AdamW::<F>::new(AdamWConfig { lr, ..AdamWConfig::default() });
    let mut opt_dual = adam(cfg.lr_dual);
    let mut opt_text = adam(cfg.lr_disc);
    let mut opt_code = adam(cfg.lr_disc);

    // Pre-tokenized pair sequences for every dual-encoder pass.
    let seqs: Vec<(TokenSeq, TokenSeq)> = pairs
        .iter()
        .map(|p| {
            (tokenize(&p.anchor, &vocab, enc.max_len), tokenize(&p.positive, &vocab, enc.max_len))
        })
        .collect();
    // Sampling key per pair: the record id plus the strategy, so two pairs
    // built from the same record draw independent negatives.
    let pair_keys: Vec<String> = pairs
        .iter()
        .map(|p| format!("{}#{:?}", p.provenance.record_id, p.strategy))
        .collect();
    let text_idx: Vec<usize> =
        (0..pairs.len()).filter(|&i| pairs[i].anchor_kind == AnchorKind::Text).collect();
    let code_idx: Vec<usize> =
        (0..pairs.len()).filter(|&i| pairs[i].anchor_kind == AnchorKind::Code).collect();

    let mut log = Logger { rows: Vec::new(), step: 0, lambda: cfg.lambda };

    // ---- warm-up ----------------------------------------------------------
    for s in 0..cfg.warmup_steps {
        let batch = pick_batch(cfg.seed, &[0, s as u64], pairs.len(), cfg.batch_size);
        let anchors: Vec<TokenSeq> = batch.iter().map(|&i| seqs[i].0.clone()).collect();
        let positives: Vec<TokenSeq> = batch.iter().map(|&i| seqs[i].1.clone()).collect();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &dual.params);
        let loss = warmup_loss_on_tape(&mut tape, &bound, &enc, &anchors, &positives)?;
        let value = tape.value(loss).item().as_f64();
        let grads = tape.backward(loss)?;
        crate::encoder::apply_grads(&bound, &grads, &mut dual.params);
        opt_dual.step(&mut dual.params);
        log.record(Phase::Warmup, value, 0)?;
    }

    // Discriminators start from the warmed-up dual weights (their heads stay
    // at their own initialization): the pairwise scores they produce are only
    // informative if the underlying representation already is, and the
    // soft labels of a from-scratch discriminator are close to uniform —
    // distilling those would erase what the warm-up just learned.
    for disc in [&mut disc_text, &mut disc_code] {
        for (name, tensor) in dual.params.iter() {
            disc.params.get_mut(name).data_mut().copy_from_slice(tensor.data());
        }
    }

    // ---- initial hard-negative pool ---------------------------------------
    let mut pool = mine_hard_negatives(&dual, &vocab, pairs, &corpus_codes, cfg.top_k)?;
    log.record(Phase::Refresh, 0.0, 0)?;

    for it in 1..=cfg.iterations {
        // ---- discriminator phase ------------------------------------------
        for s in 0..cfg.disc_steps {
            let use_text = match (text_idx.is_empty(), code_idx.is_empty()) {
                (false, false) => s % 2 == 0,
                (false, true) => true,
                _ => false,
            };
            let (idx, model, opt) = if use_text {
                (&text_idx, &mut disc_text, &mut opt_text)
            } else {
                (&code_idx, &mut disc_code, &mut opt_code)
            };
            let picks =
                pick_batch(cfg.seed, &[1, it as u64, s as u64], idx.len(), cfg.batch_size);
            let step_key = log.step + 1;
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &model.params);
            let mut losses = Vec::with_capacity(picks.len());
            for &bi in &picks {
                let pi = idx[bi];
                let neg_ids = sample_negatives(
                    pool.row(pi),
                    cfg.negative_size,
                    cfg.seed,
                    step_key,
                    &pair_keys[pi],
                )?;
                let negs: Vec<&str> = neg_ids.iter().map(|&c| corpus_codes[c].as_str()).collect();
                losses.push(discriminator_loss_on_tape(
                    &mut tape,
                    &bound,
                    &enc,
                    &vocab,
                    &pairs[pi].anchor,
                    &pairs[pi].positive,
                    &negs,
                )?);
            }
            let loss = mean_of(&mut tape, &losses)?;
            let value = tape.value(loss).item().as_f64();
            let grads = tape.backward(loss)?;
            crate::encoder::apply_grads(&bound, &grads, &mut model.params);
            opt.step(&mut model.params);
            log.record(Phase::Disc, value, it)?;
        }

        // ---- dual-encoder phase -------------------------------------------
        // Discriminators are frozen for the whole phase; weights and soft
        // labels are plain values computed from them.
        for s in 0..cfg.dual_steps {
            let picks =
                pick_batch(cfg.seed, &[2, it as u64, s as u64], pairs.len(), cfg.batch_size);
            let step_key = log.step + 1;
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &dual.params);
            let mut losses = Vec::with_capacity(picks.len());
            for &pi in &picks {
                let neg_ids = sample_negatives(
                    pool.row(pi),
                    cfg.negative_size,
                    cfg.seed,
                    step_key,
                    &pair_keys[pi],
                )?;
                let neg_texts: Vec<&str> =
                    neg_ids.iter().map(|&c| corpus_codes[c].as_str()).collect();
                let disc = if pairs[pi].anchor_kind == AnchorKind::Text {
                    &disc_text
                } else {
                    &disc_code
                };
                let mut candidates = Vec::with_capacity(1 + neg_texts.len());
                candidates.push(pairs[pi].positive.as_str());
                candidates.extend_from_slice(&neg_texts);
                let scores = disc_scores(disc, &vocab, &pairs[pi].anchor, &candidates)?;
                let weights: Vec<F> = scores[1..]
                    .iter()
                    .map(|&sn| adversarial_weight_from_scores(scores[0], sn))
                    .collect();
                let soft = SoftLabel::from_scores(&scores);
                let neg_seqs: Vec<TokenSeq> = neg_texts
                    .iter()
                    .map(|t| tokenize(t, &vocab, enc.max_len))
                    .collect();
                losses.push(dual_encoder_loss_on_tape(
                    &mut tape,
                    &bound,
                    &enc,
                    &seqs[pi].0,
                    &seqs[pi].1,
                    &neg_seqs,
                    &weights,
                    &soft,
                    cfg.lambda,
                )?);
            }
            let loss = mean_of(&mut tape, &losses)?;
            let value = tape.value(loss).item().as_f64();
            let grads = tape.backward(loss)?;
            crate::encoder::apply_grads(&bound, &grads, &mut dual.params);
            opt_dual.step(&mut dual.params);
            log.record(Phase::Dual, value, it)?;
        }

        // ---- refresh + checkpoint -----------------------------------------
        pool = mine_hard_negatives(&dual, &vocab, pairs, &corpus_codes, cfg.top_k)?;
        log.record(Phase::Refresh, 0.0, it)?;
        if let Some(dir) = &opts.out_dir {
            save_sets(&dir.join(format!("{}.iter{it}", opts.name)), &dual, &disc_text, &disc_code)?;
        }
    }

    if let Some(dir) = &opts.out_dir {
        save_sets(&dir.join(format!("{}.final", opts.name)), &dual, &disc_text, &disc_code)?;
        vocab
            .save(&dir.join("vocab.txt"))
            .map_err(|e| TrainError::BadConfig { message: e.to_string() })?;
        write_text(&dir.join("metrics.csv"), &metrics_csv(&log.rows))?;
        let meta = serde_json::json!({ "encoder": enc, "train": cfg });
        write_text(
            &dir.join(format!("{}.meta.json", opts.name)),
            &format!("{}\n", serde_json::to_string_pretty(&meta).expect("config serializes")),
        )?;
    }

    Ok(PretrainOutput { dual, disc_text, disc_code, vocab, metrics: log.rows })
}

fn mean_of<F: Scalar>(
    tape: &mut Tape<F>,
    losses: &[crate::autodiff::Var],
) -> Result<crate::autodiff::Var, TrainError> {
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    Ok(tape.scale(total, F::lit(1.0 / losses.len() as f64)))
}

fn save_sets<F: Scalar>(
    path: &Path,
    dual: &EncoderParams<F>,
    disc_text: &EncoderParams<F>,
    disc_code: &EncoderParams<F>,
) -> Result<(), TrainError> {
    save_checkpoint(
        path,
        &[
            ("dual", &dual.params),
            ("disc_text", &disc_text.params),
            ("disc_code", &disc_code.params),
        ],
    )?;
    Ok(())
}
