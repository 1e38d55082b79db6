//! Tensor checkpoints: a self-describing textual dump that round-trips
//! bit-exactly.
//!
//! Format (one tensor after another, names sorted):
//!
//! ```text
//! tensor-checkpoint v1
//! count <n-tensors>
//! tensor <name> <rank> <dim0> <dim1> ...
//! <v0> <v1> ... <vk>
//! ```
//!
//! Each value is the IEEE-754 bit pattern of the `f64` widening of the
//! element, as 16 lowercase hex digits. `f32` tensors widen losslessly, so
//! save → load round-trips exactly for both supported scalar types.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::{ParamSet, Tensor};
use crate::Scalar;

const MAGIC: &str = "tensor-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("IO error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Malformed(String),
}

/// Writes `sections` (a name prefix per parameter set) to `path`.
pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    sections: &[(&str, &ParamSet<F>)],
) -> Result<(), CheckpointError> {
    let mut entries: BTreeMap<String, &Tensor<F>> = BTreeMap::new();
    for (prefix, params) in sections {
        for (name, t) in params.iter() {
            let full = if prefix.is_empty() { name.clone() } else { format!("{prefix}.{name}") };
            entries.insert(full, t);
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "count {}", entries.len())?;
    for (name, t) in &entries {
        write!(w, "tensor {} {}", name, t.rank())?;
        for d in t.shape() {
            write!(w, " {d}")?;
        }
        writeln!(w)?;
        let mut first = true;
        for &x in t.data() {
            if !first {
                write!(w, " ")?;
            }
            first = false;
            write!(w, "{:016x}", x.as_f64().to_bits())?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads every tensor in the file, keyed by its full (prefixed) name.
pub fn load_checkpoint<F: Scalar>(
    path: &Path,
) -> Result<BTreeMap<String, Tensor<F>>, CheckpointError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let mut next = || -> Result<String, CheckpointError> {
        lines
            .next()
            .ok_or_else(|| CheckpointError::Malformed("unexpected end of file".into()))?
            .map_err(CheckpointError::from)
    };
    if next()? != MAGIC {
        return Err(CheckpointError::Malformed("missing magic header".into()));
    }
    let count_line = next()?;
    let count: usize = count_line
        .strip_prefix("count ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CheckpointError::Malformed(format!("bad count line: {count_line}")))?;

    let mut out = BTreeMap::new();
    for _ in 0..count {
        let header = next()?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(CheckpointError::Malformed(format!("bad tensor header: {header}")));
        }
        let name = parts
            .next()
            .ok_or_else(|| CheckpointError::Malformed("tensor header missing name".into()))?
            .to_string();
        let rank: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CheckpointError::Malformed(format!("bad rank in: {header}")))?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CheckpointError::Malformed(format!("bad dims in: {header}")))?;
            shape.push(d);
        }
        let data_line = next()?;
        let mut data = Vec::with_capacity(shape.iter().product());
        for word in data_line.split_whitespace() {
            let bits = u64::from_str_radix(word, 16)
                .map_err(|_| CheckpointError::Malformed(format!("bad value {word:?}")))?;
            data.push(F::lit(f64::from_bits(bits)));
        }
        let t = Tensor::from_vec(&shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        out.insert(name, t);
    }
    Ok(out)
}

/// Splits a loaded checkpoint into the parameter set stored under `prefix`.
pub fn section<F: Scalar>(
    all: &BTreeMap<String, Tensor<F>>,
    prefix: &str,
) -> ParamSet<F> {
    let mut params = ParamSet::new();
    let lead = format!("{prefix}.");
    for (name, t) in all {
        if let Some(rest) = name.strip_prefix(&lead) {
            params.insert(rest, t.clone());
        }
    }
    params
}
