//! Flat key=value run configuration.
//!
//! One `key = value` pair per line, `#` starts a comment, blank lines are
//! ignored. Unknown keys are rejected so a typo cannot silently fall back to
//! a default. Missing keys keep the defaults listed in `RunConfig::default`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use scoder_core::encoder::EncoderConfig;
use scoder_core::pairgen::PairGenConfig;
use scoder_core::syntax::node_type_set;
use scoder_core::training::TrainConfig;

#[derive(Debug)]
pub enum ConfigError {
    Io { path: String, source: std::io::Error },
    BadLine { line: usize, content: String },
    UnknownKey { line: usize, key: String },
    BadValue { line: usize, key: String, value: String, expected: &'static str },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => write!(f, "Io: {path}: {source}"),
            ConfigError::BadLine { line, content } => {
                write!(f, "BadLine: line {line} is not `key = value`: {content:?}")
            }
            ConfigError::UnknownKey { line, key } => {
                write!(f, "UnknownKey: line {line}: {key:?}")
            }
            ConfigError::BadValue { line, key, value, expected } => {
                write!(f, "BadValue: line {line}: {key} = {value:?} (expected {expected})")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// Every tunable setting of the pipeline in one flat bag. `seed` lives on the
/// command line (`--seed`, overridable via `SCODER_SEED`), not in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub pairgen: PairGenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            encoder: EncoderConfig::default(),
            pairgen: PairGenConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str_src(&text)
    }

    pub fn from_str_src(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line: line_no,
                content: raw.to_string(),
            })?;
            cfg.set(line_no, key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        macro_rules! parse {
            ($ty:ty, $expected:expr) => {
                value.parse::<$ty>().map_err(|_| ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    value: value.to_string(),
                    expected: $expected,
                })?
            };
        }
        match key {
            // training
            "lambda" => self.train.lambda = parse!(f64, "float"),
            "iterations" => self.train.iterations = parse!(usize, "integer"),
            "negative_size" => self.train.negative_size = parse!(usize, "integer"),
            "top_k" => self.train.top_k = parse!(usize, "integer"),
            "batch_size" => self.train.batch_size = parse!(usize, "integer"),
            "lr_dual" => self.train.lr_dual = parse!(f64, "float"),
            "lr_disc" => self.train.lr_disc = parse!(f64, "float"),
            "warmup_steps" => self.train.warmup_steps = parse!(usize, "integer"),
            "disc_steps" => self.train.disc_steps = parse!(usize, "integer"),
            "dual_steps" => self.train.dual_steps = parse!(usize, "integer"),
            // encoder
            "d" => self.encoder.d = parse!(usize, "integer"),
            "layers" => self.encoder.layers = parse!(usize, "integer"),
            "heads" => self.encoder.heads = parse!(usize, "integer"),
            "max_len" => self.encoder.max_len = parse!(usize, "integer"),
            "vocab_size" => self.encoder.vocab_size = parse!(usize, "integer"),
            // pair extraction
            "l_min" => self.pairgen.asst.l_min = parse!(usize, "integer"),
            "sentinel" => self.pairgen.asst.sentinel = parse!(bool, "true/false"),
            "node_types" => {
                let kinds: Vec<&str> =
                    value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                if kinds.is_empty() {
                    return Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        value: value.to_string(),
                        expected: "comma-separated node kinds",
                    });
                }
                self.pairgen.asst.node_types = node_type_set(&kinds);
            }
            "ict_token_span" => self.pairgen.ict_token_span = parse!(usize, "integer"),
            "ict_line_cnt" => self.pairgen.ict_line_cnt = parse!(usize, "integer"),
            _ => {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
        }
        Ok(())
    }

    /// `key = value` listing of every setting at its current value, suitable
    /// both as documentation of the defaults and as a starting config file.
    pub fn to_key_values(&self) -> String {
        let node_types: Vec<&str> = {
            let set: &BTreeSet<String> = &self.pairgen.asst.node_types;
            set.iter().map(String::as_str).collect()
        };
        format!(
            "lambda = {}\niterations = {}\nnegative_size = {}\ntop_k = {}\n\
             batch_size = {}\nlr_dual = {}\nlr_disc = {}\nwarmup_steps = {}\n\
             disc_steps = {}\ndual_steps = {}\nd = {}\nlayers = {}\nheads = {}\n\
             max_len = {}\nvocab_size = {}\nl_min = {}\nsentinel = {}\n\
             node_types = {}\nict_token_span = {}\nict_line_cnt = {}\n",
            self.train.lambda,
            self.train.iterations,
            self.train.negative_size,
            self.train.top_k,
            self.train.batch_size,
            self.train.lr_dual,
            self.train.lr_disc,
            self.train.warmup_steps,
            self.train.disc_steps,
            self.train.dual_steps,
            self.encoder.d,
            self.encoder.layers,
            self.encoder.heads,
            self.encoder.max_len,
            self.encoder.vocab_size,
            self.pairgen.asst.l_min,
            self.pairgen.asst.sentinel,
            node_types.join(","),
            self.pairgen.ict_token_span,
            self.pairgen.ict_line_cnt,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_flat_format() {
        let cfg = RunConfig::default();
        let parsed = RunConfig::from_str_src(&cfg.to_key_values()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn comments_blanks_and_overrides_parse() {
        let cfg = RunConfig::from_str_src(
            "# experiment 12\n\nlambda = 0.5   # heavier adversarial term\ntop_k = 99\n",
        )
        .unwrap();
        assert_eq!(cfg.train.lambda, 0.5);
        assert_eq!(cfg.train.top_k, 99);
        assert_eq!(cfg.train.batch_size, RunConfig::default().train.batch_size);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let err = RunConfig::from_str_src("learning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("UnknownKey"), "{err}");
        let err = RunConfig::from_str_src("top_k = fifty\n").unwrap_err();
        assert!(err.to_string().contains("BadValue"), "{err}");
        let err = RunConfig::from_str_src("just a sentence\n").unwrap_err();
        assert!(err.to_string().contains("BadLine"), "{err}");
    }

    #[test]
    fn node_types_parse_as_a_comma_list() {
        let cfg = RunConfig::from_str_src("node_types = assign_statement, return_statement\n")
            .unwrap();
        assert!(cfg.pairgen.asst.node_types.contains("assign_statement"));
        assert_eq!(cfg.pairgen.asst.node_types.len(), 2);
    }
}
