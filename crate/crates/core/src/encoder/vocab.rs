//! Subtoken vocabulary and sequence preparation.
//!
//! Identifiers are split on `snake_case`, `camelCase` and letter/digit
//! boundaries and lowercased; every punctuation character is its own token;
//! whitespace only separates. The literal extraction sentinel produced by
//! pair generation is kept as a single reserved token so that anchors with a
//! hole tokenize the same way regardless of the surrounding vocabulary.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::pairgen::EXTRACTED_SENTINEL;

/// Reserved token ids, in vocabulary order.
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const EXTRACTED_ID: usize = 4;

/// Reserved tokens pinned to ids `0..5` in every vocabulary.
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<cls>", "<sep>", EXTRACTED_SENTINEL];

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("Malformed: {path} line {line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
}

/// Frequency-ranked subtoken vocabulary with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from raw texts: subtokens ranked by descending
    /// frequency (ties broken by token string), truncated to `max_size`
    /// entries including the reserved tokens. Reserved tokens always keep
    /// ids `0..5`, so the effective minimum size is 5.
    pub fn build<'a, I>(texts: I, max_size: usize) -> Vocab
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for text in texts {
            for tok in subtokens(text) {
                if !SPECIAL_TOKENS.contains(&tok.as_str()) {
                    *counts.entry(tok).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let keep = max_size.saturating_sub(SPECIAL_TOKENS.len());
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().take(keep).map(|(t, _)| t));
        Vocab::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    /// Id for `token`, falling back to [`UNK_ID`] for out-of-vocabulary input.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Token string for a dense id.
    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Writes the vocabulary as an ordered token list, one token per line.
    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let mut out = String::with_capacity(self.tokens.len() * 8);
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        let mut file = std::fs::File::create(path)
            .map_err(|source| VocabError::Io { path: path.to_path_buf(), source })?;
        file.write_all(out.as_bytes())
            .map_err(|source| VocabError::Io { path: path.to_path_buf(), source })
    }

    /// Reads a vocabulary saved by [`Vocab::save`], validating the reserved
    /// prefix and id density (no duplicate tokens).
    pub fn load(path: &Path) -> Result<Vocab, VocabError> {
        let file = std::fs::File::open(path)
            .map_err(|source| VocabError::Io { path: path.to_path_buf(), source })?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            let line =
                line.map_err(|source| VocabError::Io { path: path.to_path_buf(), source })?;
            tokens.push(line);
        }
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(VocabError::Malformed {
                path: path.to_path_buf(),
                line: tokens.len(),
                message: format!("expected at least {} reserved tokens", SPECIAL_TOKENS.len()),
            });
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *special {
                return Err(VocabError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("reserved token {i} is {:?}, expected {special:?}", tokens[i]),
                });
            }
        }
        let mut seen = BTreeMap::new();
        for (i, tok) in tokens.iter().enumerate() {
            if let Some(first) = seen.insert(tok.clone(), i) {
                return Err(VocabError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("duplicate token {tok:?} (first at line {})", first + 1),
                });
            }
        }
        Ok(Vocab::from_tokens(tokens))
    }
}

impl fmt::Display for Vocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vocab({} tokens)", self.tokens.len())
    }
}

/// Splits text into lowercased subtokens: words break on `_`, lower→upper
/// camel boundaries and letter/digit transitions; every non-alphanumeric,
/// non-whitespace character is a single-character token; the extraction
/// sentinel survives as one token.
pub fn subtokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut i = 0;
    let bytes = text.as_bytes();
    while i < bytes.len() {
        if text[i..].starts_with(EXTRACTED_SENTINEL) {
            split_word(&word, &mut out);
            word.clear();
            out.push(EXTRACTED_SENTINEL.to_string());
            i += EXTRACTED_SENTINEL.len();
            continue;
        }
        let c = text[i..].chars().next().expect("in-bounds char");
        if c.is_alphanumeric() || c == '_' {
            word.push(c);
        } else {
            split_word(&word, &mut out);
            word.clear();
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
        i += c.len_utf8();
    }
    split_word(&word, &mut out);
    out
}

fn split_word(word: &str, out: &mut Vec<String>) {
    for piece in word.split('_').filter(|p| !p.is_empty()) {
        let chars: Vec<char> = piece.chars().collect();
        let mut start = 0;
        for k in 1..chars.len() {
            let (prev, cur) = (chars[k - 1], chars[k]);
            let boundary = (prev.is_lowercase() && cur.is_uppercase())
                || (prev.is_alphabetic() && cur.is_numeric())
                || (prev.is_numeric() && cur.is_alphabetic());
            if boundary {
                push_lower(&chars[start..k], out);
                start = k;
            }
        }
        push_lower(&chars[start..], out);
    }
}

fn push_lower(chars: &[char], out: &mut Vec<String>) {
    if !chars.is_empty() {
        out.push(chars.iter().flat_map(|c| c.to_lowercase()).collect());
    }
}

/// A tokenized sequence: dense ids with an attention mask. Position 0 is
/// always CLS and `mask[i] == 1` exactly on non-PAD positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
    pub max_len: usize,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Copy with PAD tokens (mask 0) appended up to `total_len`.
    pub fn padded(&self, total_len: usize) -> TokenSeq {
        assert!(total_len >= self.ids.len(), "padded target below current length");
        let mut ids = self.ids.clone();
        let mut mask = self.mask.clone();
        ids.resize(total_len, PAD_ID);
        mask.resize(total_len, 0);
        TokenSeq { ids, mask, max_len: self.max_len.max(total_len) }
    }
}

/// Tokenizes one text as `[CLS] subtokens…`, hard-truncated to `max_len`.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> TokenSeq {
    debug_assert!(max_len >= 2, "max_len must leave room for CLS plus one token");
    let mut ids = Vec::with_capacity(max_len.min(64));
    ids.push(CLS_ID);
    for tok in subtokens(text) {
        if ids.len() == max_len {
            break;
        }
        ids.push(vocab.id(&tok));
    }
    let mask = vec![1; ids.len()];
    TokenSeq { ids, mask, max_len }
}

/// Tokenizes a pair as `[CLS] x [SEP] y`, truncating from the end of `y`
/// first and only then from the end of `x` until the sequence fits.
pub fn tokenize_pair(x: &str, y: &str, vocab: &Vocab, max_len: usize) -> TokenSeq {
    debug_assert!(max_len >= 2, "max_len must leave room for CLS and SEP");
    let mut xs = subtokens(x);
    let mut ys = subtokens(y);
    let budget = max_len.saturating_sub(2);
    while xs.len() + ys.len() > budget {
        if ys.pop().is_none() {
            xs.pop();
        }
    }
    let mut ids = Vec::with_capacity(xs.len() + ys.len() + 2);
    ids.push(CLS_ID);
    ids.extend(xs.iter().map(|t| vocab.id(t)));
    ids.push(SEP_ID);
    ids.extend(ys.iter().map(|t| vocab.id(t)));
    let mask = vec![1; ids.len()];
    TokenSeq { ids, mask, max_len }
}
