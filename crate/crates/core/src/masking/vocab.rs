use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const MASK_ID: usize = 4;
/// First id available to corpus tokens.
pub const FIRST_WORD_ID: usize = 5;

pub const RESERVED: [&str; FIRST_WORD_ID] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|t| t.to_lowercase())
}

pub fn is_special(id: usize) -> bool {
    id < FIRST_WORD_ID
}

/// Dense token ↔ id map with the five reserved tokens at ids 0–4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?} at id {i}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    /// Ranks lowercased tokens by descending frequency, ties broken
    /// lexicographically, keeping at most `max_size` entries in total
    /// (reserved tokens included).
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        if max_size <= FIRST_WORD_ID {
            return Err(Error::Config(format!(
                "vocabulary size must exceed {FIRST_WORD_ID}, got {max_size}"
            )));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in lines {
            for tok in tokenize(line) {
                if RESERVED.iter().any(|r| r.to_lowercase() == tok) {
                    continue;
                }
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Data("corpus contains no tokens".into()));
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .take(max_size)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps text to ids; unknown tokens become `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .map(|t| self.id(&t).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("[UNK]"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() <= FIRST_WORD_ID || tokens[..FIRST_WORD_ID] != RESERVED {
            return Err(Error::Data(format!(
                "vocabulary file {} must start with the reserved tokens {:?}",
                path.display(),
                RESERVED
            )));
        }
        Self::from_tokens(tokens)
    }
}
