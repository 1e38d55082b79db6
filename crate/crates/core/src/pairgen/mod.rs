//! Positive-pair construction for contrastive pre-training.
//!
//! Five strategies over function records:
//!
//! * **comment** — (docstring, code with the docstring stripped);
//! * **asst** — (extracted syntax-subtree text, remaining context), the
//!   subtree chosen by sampling a leaf and climbing to an eligible ancestor;
//! * **transform** — semantics-preserving rewrites: consistent variable
//!   renaming or dead-code insertion, paired with the original;
//! * **ict_token / ict_line** — inverse cloze splits removing a random token
//!   run or line block, paired with the remainder.
//!
//! Removal-style pairs record the removal offset so the original source can
//! be reconstructed byte-exactly with [`splice`]. All strategies are
//! deterministic functions of (record, seed, config); per-record randomness
//! is keyed by the record id, so corpus order never affects outputs.

mod ops;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::syntax::{node_type_set, NodeTypeSet, ParseError, SourceText};

pub use ops::{
    apply_rename, bound_identifier_order, comment_pair, extract_asst_pair, ict_line_split,
    ict_token_split, splice, strip_dead_code, strip_docstring, transform_insert_dead_code,
    transform_rename_variables, DEAD_CODE_MARK, DEAD_CODE_TEMPLATES, EXTRACTED_SENTINEL,
    INDIVISIBLE_KINDS,
};

/// One function-level source record, as stored in records JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: String,
    pub language: String,
    pub code: String,
    pub docstring: Option<String>,
}

impl FunctionRecord {
    pub fn source_text(&self) -> SourceText {
        SourceText::new(self.id.clone(), self.code.clone())
    }

    /// Checks the record invariants: non-empty code, and a docstring (when
    /// present) containing at least one non-whitespace character.
    pub fn validate(&self) -> Result<(), PairGenError> {
        if self.code.is_empty() {
            return Err(PairGenError::InvalidRecord {
                record_id: self.id.clone(),
                detail: "code is empty".to_string(),
            });
        }
        if let Some(doc) = &self.docstring {
            if doc.trim().is_empty() {
                return Err(PairGenError::InvalidRecord {
                    record_id: self.id.clone(),
                    detail: "docstring is all whitespace".to_string(),
                });
            }
        }
        Ok(())
    }
}

/// How a pair was constructed (the tag stored on the pair itself; both
/// transform flavors share the `transform` tag).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Comment,
    Asst,
    Transform,
    IctToken,
    IctLine,
}

/// Whether the anchor half is natural-language text or code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    Text,
    Code,
}

/// Where a pair came from; `removal_offset` lets removal-style pairs be
/// spliced back into the original source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub record_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub removal_offset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

/// A positive pair for contrastive training. `anchor != positive` always
/// holds; degenerate constructions are rejected at build time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivePair {
    pub anchor: String,
    pub positive: String,
    pub strategy: Strategy,
    pub anchor_kind: AnchorKind,
    pub provenance: Provenance,
}

/// Configuration for subtree extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsstConfig {
    /// Node kinds whose subtrees may be extracted.
    pub node_types: NodeTypeSet,
    /// Minimum byte length of the extracted span.
    pub l_min: usize,
    pub seed: u64,
    /// Replace the removed span with `"<extracted>"` in the context instead
    /// of plain removal (ablation aid; breaks the splice identity).
    pub sentinel: bool,
}

/// The default extractable node kinds. `function_call` carries the extra
/// condition that it must not sit under one of [`INDIVISIBLE_KINDS`].
pub fn default_asst_node_types() -> NodeTypeSet {
    node_type_set(&[
        "for_statement",
        "while_statement",
        "if_statement",
        "with_statement",
        "try_statement",
        "assignment_statement",
        "function_call",
    ])
}

impl Default for AsstConfig {
    fn default() -> Self {
        AsstConfig { node_types: default_asst_node_types(), l_min: 20, seed: 0, sentinel: false }
    }
}

/// Settings for a whole corpus build; strategy-specific knobs in one place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairGenConfig {
    pub asst: AsstConfig,
    /// Tokens removed per `ict_token` pair.
    pub ict_token_span: usize,
    /// Lines removed per `ict_line` pair.
    pub ict_line_cnt: usize,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        PairGenConfig { asst: AsstConfig::default(), ict_token_span: 10, ict_line_cnt: 2 }
    }
}

/// Which operation a corpus build applies to each record (finer-grained than
/// [`Strategy`]: the two transform flavors are selected separately).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildStrategy {
    Comment,
    Asst,
    TransformRename,
    TransformDeadcode,
    IctToken,
    IctLine,
}

impl BuildStrategy {
    pub const ALL: &'static [BuildStrategy] = &[
        BuildStrategy::Comment,
        BuildStrategy::Asst,
        BuildStrategy::TransformRename,
        BuildStrategy::TransformDeadcode,
        BuildStrategy::IctToken,
        BuildStrategy::IctLine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuildStrategy::Comment => "comment",
            BuildStrategy::Asst => "asst",
            BuildStrategy::TransformRename => "transform-rename",
            BuildStrategy::TransformDeadcode => "transform-deadcode",
            BuildStrategy::IctToken => "ict-token",
            BuildStrategy::IctLine => "ict-line",
        }
    }
}

impl std::str::FromStr for BuildStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BuildStrategy::ALL
            .iter()
            .copied()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = BuildStrategy::ALL.iter().map(|b| b.name()).collect();
                format!("unknown strategy {s:?}, expected one of {}", names.join("|"))
            })
    }
}

/// Per-reason skip counts from a corpus build.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub records_in: usize,
    pub pairs_out: usize,
    pub skipped: BTreeMap<String, usize>,
}

impl fmt::Display for SkipReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "records_in={} pairs_out={}", self.records_in, self.pairs_out)?;
        for (reason, n) in &self.skipped {
            write!(f, " skipped.{reason}={n}")?;
        }
        Ok(())
    }
}

/// Pairs plus the skip report for one build call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCorpus {
    pub pairs: Vec<PositivePair>,
    pub report: SkipReport,
}

#[derive(Debug, Error)]
pub enum PairGenError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("NoEligibleNode: record {record_id}: no subtree satisfies the node-type and length constraints")]
    NoEligibleNode { record_id: String },
    #[error("TransformNoop: record {record_id}: the transformation does not apply")]
    TransformNoop { record_id: String },
    #[error("TooShort: record {record_id}: {detail}")]
    TooShort { record_id: String, detail: String },
    #[error("DegeneratePair: record {record_id}: anchor equals positive")]
    DegeneratePair { record_id: String },
    #[error("InvalidRecord: record {record_id}: {detail}")]
    InvalidRecord { record_id: String, detail: String },
    #[error("EmptyOutput: no pairs produced from {records} records ({skipped} skipped)")]
    EmptyOutput { records: usize, skipped: usize },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

impl PairGenError {
    /// Short stable label used as the skip-report key.
    pub fn reason(&self) -> &'static str {
        match self {
            PairGenError::Parse(_) => "ParseError",
            PairGenError::NoEligibleNode { .. } => "NoEligibleNode",
            PairGenError::TransformNoop { .. } => "TransformNoop",
            PairGenError::TooShort { .. } => "TooShort",
            PairGenError::DegeneratePair { .. } => "DegeneratePair",
            PairGenError::InvalidRecord { .. } => "InvalidRecord",
            PairGenError::EmptyOutput { .. } => "EmptyOutput",
            PairGenError::Jsonl(_) => "Jsonl",
        }
    }
}

/// Applies one strategy to every record, skipping (and counting) records the
/// strategy cannot handle. Output is sorted by record id and fully
/// determined by `(records, strategy, cfg, seed)`.
pub fn build_pair_corpus(
    records: &[FunctionRecord],
    strategy: BuildStrategy,
    cfg: &PairGenConfig,
    seed: u64,
) -> Result<PairCorpus, PairGenError> {
    let mut pairs: Vec<PositivePair> = Vec::new();
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    let bump = |map: &mut BTreeMap<String, usize>, reason: &str| {
        *map.entry(reason.to_string()).or_insert(0) += 1;
    };
    for rec in records {
        if let Err(e) = rec.validate() {
            bump(&mut skipped, e.reason());
            continue;
        }
        let made: Result<Option<PositivePair>, PairGenError> = match strategy {
            BuildStrategy::Comment => Ok(comment_pair(rec)),
            BuildStrategy::Asst => {
                let cfg = AsstConfig { seed, ..cfg.asst.clone() };
                extract_asst_pair(rec, &cfg).map(Some)
            }
            BuildStrategy::TransformRename => transform_rename_variables(rec, seed).map(Some),
            BuildStrategy::TransformDeadcode => transform_insert_dead_code(rec, seed).map(Some),
            BuildStrategy::IctToken => ict_token_split(rec, seed, cfg.ict_token_span).map(Some),
            BuildStrategy::IctLine => ict_line_split(rec, seed, cfg.ict_line_cnt).map(Some),
        };
        match made {
            Ok(Some(pair)) => pairs.push(pair),
            Ok(None) => bump(&mut skipped, "NoComment"),
            Err(e) => bump(&mut skipped, e.reason()),
        }
    }
    pairs.sort_by(|a, b| a.provenance.record_id.cmp(&b.provenance.record_id));
    let skipped_total: usize = skipped.values().sum();
    if pairs.is_empty() {
        return Err(PairGenError::EmptyOutput { records: records.len(), skipped: skipped_total });
    }
    let report =
        SkipReport { records_in: records.len(), pairs_out: pairs.len(), skipped };
    Ok(PairCorpus { pairs, report })
}

/// Reads function records from JSONL.
pub fn read_records_jsonl(path: &Path) -> Result<Vec<FunctionRecord>, PairGenError> {
    Ok(jsonl::read_jsonl(path)?)
}

/// Writes function records as JSONL.
pub fn write_records_jsonl(path: &Path, records: &[FunctionRecord]) -> Result<(), PairGenError> {
    Ok(jsonl::write_jsonl(path, records)?)
}

/// Reads positive pairs from JSONL.
pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<PositivePair>, PairGenError> {
    Ok(jsonl::read_jsonl(path)?)
}

/// Writes positive pairs as JSONL.
pub fn write_pairs_jsonl(path: &Path, pairs: &[PositivePair]) -> Result<(), PairGenError> {
    Ok(jsonl::write_jsonl(path, pairs)?)
}
