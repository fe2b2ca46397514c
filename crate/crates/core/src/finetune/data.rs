use rand::Rng as _;

use crate::error::{Error, Result};
use crate::masking::{CLS_ID, FIRST_WORD_ID, SEP_ID};
use crate::rng::{stream_rng, Rng, Stream};

/// Longest answer span.
pub const MAX_SPAN_LEN: usize = 5;
/// Id of the token encoding span length `ℓ` is `LENGTH_TOKEN_BASE + ℓ - 1`.
pub const LENGTH_TOKEN_BASE: usize = FIRST_WORD_ID;
/// Smallest id used as a key; ids below it are length tokens.
pub const KEY_MIN: usize = LENGTH_TOKEN_BASE + MAX_SPAN_LEN;
/// First body slot: after `[CLS] key length [SEP]`.
pub const BODY_START: usize = 4;

/// One synthetic extraction example:
/// `[CLS] key length [SEP] body… [SEP]`, no padding.
///
/// The answer is the `ℓ`-token span of the body that begins at the single
/// occurrence of `key`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanExample {
    pub ids: Vec<usize>,
    pub key: usize,
    pub span_len: usize,
    pub start: usize,
    pub end: usize,
}

impl SpanExample {
    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }
}

pub fn length_token(span_len: usize) -> usize {
    LENGTH_TOKEN_BASE + span_len - 1
}

/// Smallest sequence length that fits a span of every length.
pub fn min_span_seq_len() -> usize {
    BODY_START + MAX_SPAN_LEN + 1
}

/// Span starts allowed for length `span_len` in a sequence of `seq_len`.
pub fn valid_starts(seq_len: usize, span_len: usize) -> std::ops::RangeInclusive<usize> {
    BODY_START..=seq_len - 1 - span_len
}

fn check(seq_len: usize, vocab_size: usize) -> Result<()> {
    if seq_len < min_span_seq_len() {
        return Err(Error::Config(format!(
            "finetune.seq_len must be at least {}, got {seq_len}",
            min_span_seq_len()
        )));
    }
    if vocab_size < KEY_MIN + 2 {
        return Err(Error::Config(format!(
            "span task needs a vocabulary of at least {} ids, got {vocab_size}",
            KEY_MIN + 2
        )));
    }
    Ok(())
}

/// Draws one example. Body tokens are uniform over word ids except `key`.
pub fn sample_span_example(rng: &mut Rng, seq_len: usize, vocab_size: usize) -> Result<SpanExample> {
    check(seq_len, vocab_size)?;
    let span_len = rng.random_range(1..=MAX_SPAN_LEN);
    let start = rng.random_range(valid_starts(seq_len, span_len));
    let key = rng.random_range(KEY_MIN..vocab_size);
    let mut ids = Vec::with_capacity(seq_len);
    ids.extend([CLS_ID, key, length_token(span_len), SEP_ID]);
    for j in BODY_START..seq_len - 1 {
        if j == start {
            ids.push(key);
        } else {
            let r = rng.random_range(FIRST_WORD_ID..vocab_size - 1);
            ids.push(if r >= key { r + 1 } else { r });
        }
    }
    ids.push(SEP_ID);
    Ok(SpanExample {
        ids,
        key,
        span_len,
        start,
        end: start + span_len - 1,
    })
}

/// Train and dev sets from separate random streams.
pub fn generate_span_dataset(
    seed: u64,
    seq_len: usize,
    vocab_size: usize,
    train_size: usize,
    dev_size: usize,
) -> Result<(Vec<SpanExample>, Vec<SpanExample>)> {
    check(seq_len, vocab_size)?;
    let make = |stream: Stream, n: usize| {
        let mut rng = stream_rng(seed, stream, 0);
        (0..n)
            .map(|_| sample_span_example(&mut rng, seq_len, vocab_size))
            .collect::<Result<Vec<_>>>()
    };
    Ok((make(Stream::SpanTrainData, train_size)?, make(Stream::SpanDevData, dev_size)?))
}
