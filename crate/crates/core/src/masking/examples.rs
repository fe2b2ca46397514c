use super::vocab::{CLS_ID, PAD_ID, SEP_ID};
use crate::error::{Error, Result};

/// One packed training sequence: `[CLS] body [SEP]` followed by `[PAD]`s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<usize>,
    /// Number of non-pad slots (`body + 2`).
    pub valid_len: usize,
}

impl Example {
    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }

    pub fn body_len(&self) -> usize {
        self.valid_len - 2
    }

    /// Slot indices that may be masked: the body, excluding `[CLS]`,
    /// `[SEP]` and padding.
    pub fn body_slots(&self) -> std::ops::Range<usize> {
        1..self.valid_len - 1
    }
}

/// Greedily packs `seq_len − 2` body tokens per example. The final example
/// is padded at the tail.
pub fn make_examples(stream: &[usize], seq_len: usize) -> Result<Vec<Example>> {
    if seq_len < 4 {
        return Err(Error::Config(format!(
            "sequence length must be at least 4, got {seq_len}"
        )));
    }
    let body = seq_len - 2;
    Ok(stream
        .chunks(body)
        .map(|chunk| {
            let mut ids = Vec::with_capacity(seq_len);
            ids.push(CLS_ID);
            ids.extend_from_slice(chunk);
            ids.push(SEP_ID);
            let valid_len = ids.len();
            ids.resize(seq_len, PAD_ID);
            Example { ids, valid_len }
        })
        .collect())
}
