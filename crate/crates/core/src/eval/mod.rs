//! Retrieval evaluation: embedding index, exact nearest-neighbor search,
//! MRR / MAP@R, and a synthetic corpus generator for end-to-end runs.
//!
//! Similarity is the raw dot product of pooled vectors — the same quantity
//! the dual encoder is trained on — not cosine; orderings can differ from a
//! normalized index and that is intentional.

mod toygen;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{encode_batch, EncoderError, EncoderParams, Vocab};
use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};
use crate::Scalar;

pub use toygen::{gen_toy_corpus, ToyCorpus, TOY_FAMILIES};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("BadTask: {message}")]
    BadTask { message: String },
    #[error("BadIndex: {message}")]
    BadIndex { message: String },
    #[error("KTooLarge: k={k} exceeds corpus size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("MissingRelevance: query {query} needs {need}, has {have} relevant ids")]
    MissingRelevance { query: String, need: &'static str, have: usize },
    #[error("ListTooShort: query {query} ranked {have} items but R={need}")]
    ListTooShort { query: String, have: usize, need: usize },
    #[error("EmptyTask: no queries to evaluate")]
    EmptyTask,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Pooled vectors for a list of ids, rows aligned with the id list.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex<F = f64> {
    ids: Vec<String>,
    vectors: Vec<Vec<F>>,
    /// Label of the encoder state that produced the rows.
    pub version: String,
}

impl<F: Scalar> EmbeddingIndex<F> {
    pub fn new(
        ids: Vec<String>,
        vectors: Vec<Vec<F>>,
        version: impl Into<String>,
    ) -> Result<Self, EvalError> {
        if ids.len() != vectors.len() {
            return Err(EvalError::BadIndex {
                message: format!("{} ids vs {} vectors", ids.len(), vectors.len()),
            });
        }
        let dim = vectors.first().map_or(0, |v| v.len());
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(EvalError::BadIndex {
                    message: format!("row {} ({}) has dim {}, expected {dim}", i, ids[i], v.len()),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(EvalError::BadIndex {
                    message: format!("non-finite embedding for id {}", ids[i]),
                });
            }
        }
        Ok(EmbeddingIndex { ids, vectors, version: version.into() })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, row: usize) -> &[F] {
        &self.vectors[row]
    }
}

/// Embeds `(id, text)` items in order into an index labeled `version`.
pub fn embed_corpus<F: Scalar>(
    model: &EncoderParams<F>,
    vocab: &Vocab,
    items: &[(String, String)],
    version: &str,
) -> Result<EmbeddingIndex<F>, EvalError> {
    let texts: Vec<String> = items.iter().map(|(_, t)| t.clone()).collect();
    let vectors = encode_batch(model, vocab, &texts)?;
    EmbeddingIndex::new(items.iter().map(|(id, _)| id.clone()).collect(), vectors, version)
}

/// Exact top-`k` ids by dot product, descending; ties broken by ascending
/// id. Brute force over the whole index.
pub fn knn_search<F: Scalar>(
    index: &EmbeddingIndex<F>,
    query: &[F],
    k: usize,
) -> Result<Vec<String>, EvalError> {
    if k > index.len() {
        return Err(EvalError::KTooLarge { k, n: index.len() });
    }
    let mut scored: Vec<(usize, f64)> = index
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s: F = query.iter().zip(v).map(|(&a, &b)| a * b).sum();
            (i, s.as_f64())
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(index.ids[a.0].cmp(&index.ids[b.0])));
    Ok(scored.into_iter().take(k).map(|(i, _)| index.ids[i].clone()).collect())
}

fn reciprocal_rank(ranked: &[String], target: &str) -> f64 {
    ranked
        .iter()
        .position(|id| id == target)
        .map_or(0.0, |p| 1.0 / (p as f64 + 1.0))
}

/// Average precision over the first `R = relevant.len()` positions.
fn average_precision_at_r(ranked: &[String], relevant: &BTreeSet<&str>) -> f64 {
    let r = relevant.len();
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (i, id) in ranked.iter().take(r).enumerate() {
        if relevant.contains(id.as_str()) {
            hits += 1;
            precision_sum += hits as f64 / (i as f64 + 1.0);
        }
    }
    precision_sum / r as f64
}

/// Mean reciprocal rank. Each query must have exactly one relevant id; a
/// relevant id absent from the ranked list contributes 0.
pub fn mrr(ranked: &[Vec<String>], relevant: &[Vec<String>]) -> Result<f64, EvalError> {
    if ranked.is_empty() || ranked.len() != relevant.len() {
        return Err(EvalError::BadTask {
            message: format!("{} rank lists vs {} relevance sets", ranked.len(), relevant.len()),
        });
    }
    let mut total = 0.0;
    for (qi, (list, rel)) in ranked.iter().zip(relevant).enumerate() {
        if rel.len() != 1 {
            return Err(EvalError::MissingRelevance {
                query: format!("#{qi}"),
                need: "exactly one",
                have: rel.len(),
            });
        }
        total += reciprocal_rank(list, &rel[0]);
    }
    Ok(total / ranked.len() as f64)
}

/// Mean average precision at `R`: per query, precision over the first `R`
/// returned items where `R` is that query's relevant-set size.
pub fn map_at_r(ranked: &[Vec<String>], relevant: &[Vec<String>]) -> Result<f64, EvalError> {
    if ranked.is_empty() || ranked.len() != relevant.len() {
        return Err(EvalError::BadTask {
            message: format!("{} rank lists vs {} relevance sets", ranked.len(), relevant.len()),
        });
    }
    let mut total = 0.0;
    for (qi, (list, rel)) in ranked.iter().zip(relevant).enumerate() {
        if rel.is_empty() {
            return Err(EvalError::MissingRelevance {
                query: format!("#{qi}"),
                need: "at least one",
                have: 0,
            });
        }
        if list.len() < rel.len() {
            return Err(EvalError::ListTooShort {
                query: format!("#{qi}"),
                have: list.len(),
                need: rel.len(),
            });
        }
        let set: BTreeSet<&str> = rel.iter().map(|s| s.as_str()).collect();
        total += average_precision_at_r(list, &set);
    }
    Ok(total / ranked.len() as f64)
}

/// What a retrieval task measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    CommentToCode,
    CodeToCode,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::CommentToCode => f.write_str("comment_to_code"),
            TaskKind::CodeToCode => f.write_str("code_to_code"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub id: String,
    pub text: String,
    pub relevant: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub code: String,
}

/// A retrieval task: queries against a candidate pool with per-query
/// relevant ids. For code-to-code tasks a query's own pool entry (same id)
/// is excluded from its ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTask {
    pub kind: TaskKind,
    pub queries: Vec<EvalQuery>,
    pub pool: Vec<PoolEntry>,
}

impl EvalTask {
    pub fn validate(&self) -> Result<(), EvalError> {
        let pool_ids: BTreeSet<&str> = self.pool.iter().map(|p| p.id.as_str()).collect();
        if pool_ids.len() != self.pool.len() {
            return Err(EvalError::BadTask { message: "duplicate pool ids".into() });
        }
        for q in &self.queries {
            if q.relevant.is_empty() {
                return Err(EvalError::MissingRelevance {
                    query: q.id.clone(),
                    need: "at least one",
                    have: 0,
                });
            }
            for rel in &q.relevant {
                if !pool_ids.contains(rel.as_str()) {
                    return Err(EvalError::BadTask {
                        message: format!("query {} references unknown pool id {rel}", q.id),
                    });
                }
            }
        }
        Ok(())
    }
}

/// One JSONL line of a serialized task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TaskLine {
    Meta { kind: TaskKind },
    Pool { id: String, code: String },
    Query { id: String, text: String, relevant: Vec<String> },
}

pub fn write_task_jsonl(path: &Path, task: &EvalTask) -> Result<(), EvalError> {
    let mut lines = Vec::with_capacity(1 + task.pool.len() + task.queries.len());
    lines.push(TaskLine::Meta { kind: task.kind });
    for p in &task.pool {
        lines.push(TaskLine::Pool { id: p.id.clone(), code: p.code.clone() });
    }
    for q in &task.queries {
        lines.push(TaskLine::Query {
            id: q.id.clone(),
            text: q.text.clone(),
            relevant: q.relevant.clone(),
        });
    }
    Ok(write_jsonl(path, &lines)?)
}

pub fn read_task_jsonl(path: &Path) -> Result<EvalTask, EvalError> {
    let lines: Vec<TaskLine> = read_jsonl(path)?;
    let mut kind = None;
    let mut queries = Vec::new();
    let mut pool = Vec::new();
    for line in lines {
        match line {
            TaskLine::Meta { kind: k } => {
                if kind.replace(k).is_some() {
                    return Err(EvalError::BadTask {
                        message: format!("{}: more than one meta line", path.display()),
                    });
                }
            }
            TaskLine::Pool { id, code } => pool.push(PoolEntry { id, code }),
            TaskLine::Query { id, text, relevant } => {
                queries.push(EvalQuery { id, text, relevant })
            }
        }
    }
    let kind = kind.ok_or_else(|| EvalError::BadTask {
        message: format!("{}: missing meta line", path.display()),
    })?;
    let task = EvalTask { kind, queries, pool };
    task.validate()?;
    Ok(task)
}

/// Aggregate score plus the per-query breakdown, in task query order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub kind: TaskKind,
    pub metric: &'static str,
    pub score: f64,
    pub queries: usize,
    pub per_query: Vec<(String, f64)>,
}

impl EvalReport {
    /// CSV with one row per query.
    pub fn per_query_csv(&self) -> String {
        let mut out = String::from("query_id,value\n");
        for (id, v) in &self.per_query {
            out.push_str(&format!("{id},{v}\n"));
        }
        out
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        format!(
            "task: {}\nmetric: {}\nqueries: {}\nscore: {}\n",
            self.kind, self.metric, self.queries, self.score
        )
    }
}

/// Embeds pool and queries, ranks the full pool per query, and reports the
/// task's metric: MRR for comment→code, MAP@R for code→code. Code→code
/// rankings drop the query's own pool entry before scoring.
pub fn run_eval<F: Scalar>(
    model: &EncoderParams<F>,
    vocab: &Vocab,
    task: &EvalTask,
) -> Result<EvalReport, EvalError> {
    task.validate()?;
    if task.queries.is_empty() {
        return Err(EvalError::EmptyTask);
    }
    let pool_items: Vec<(String, String)> =
        task.pool.iter().map(|p| (p.id.clone(), p.code.clone())).collect();
    let index = embed_corpus(model, vocab, &pool_items, "eval")?;
    let query_texts: Vec<String> = task.queries.iter().map(|q| q.text.clone()).collect();
    let query_vecs = encode_batch(model, vocab, &query_texts)?;

    let mut per_query = Vec::with_capacity(task.queries.len());
    let mut total = 0.0;
    for (q, vec) in task.queries.iter().zip(&query_vecs) {
        let mut ranked = knn_search(&index, vec, index.len())?;
        if task.kind == TaskKind::CodeToCode {
            ranked.retain(|id| id != &q.id);
        }
        let value = match task.kind {
            TaskKind::CommentToCode => {
                if q.relevant.len() != 1 {
                    return Err(EvalError::MissingRelevance {
                        query: q.id.clone(),
                        need: "exactly one",
                        have: q.relevant.len(),
                    });
                }
                reciprocal_rank(&ranked, &q.relevant[0])
            }
            TaskKind::CodeToCode => {
                if ranked.len() < q.relevant.len() {
                    return Err(EvalError::ListTooShort {
                        query: q.id.clone(),
                        have: ranked.len(),
                        need: q.relevant.len(),
                    });
                }
                let set: BTreeSet<&str> = q.relevant.iter().map(|s| s.as_str()).collect();
                average_precision_at_r(&ranked, &set)
            }
        };
        total += value;
        per_query.push((q.id.clone(), value));
    }
    let metric = match task.kind {
        TaskKind::CommentToCode => "mrr",
        TaskKind::CodeToCode => "map_at_r",
    };
    Ok(EvalReport {
        kind: task.kind,
        metric,
        score: total / task.queries.len() as f64,
        queries: task.queries.len(),
        per_query,
    })
}
