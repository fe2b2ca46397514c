//! Corpus ingestion, vocabulary, example packing, and the two masking
//! strategies: token ids (mask / random / keep) and position ids
//! (mask / keep / random).

mod batch;
mod corpus;
mod examples;
mod mask;
mod vocab;

pub use batch::{assemble_batch, MaskStreams, MaskedBatch};
pub use corpus::{read_corpus_lines, synthetic_corpus, write_corpus_lines, Corpus};
pub use examples::{make_examples, Example};
pub use mask::{
    apply_position_mask, apply_token_mask, draw_position_branch, draw_token_branch,
    mask_slot_count, select_mask_slots, MaskingConfig, PositionBranch, PositionMasking,
    PositionSplit, SlotAlignment, TokenBranch, TokenMasking, TokenSplit,
};
pub use vocab::{
    is_special, tokenize, Vocab, CLS_ID, FIRST_WORD_ID, MASK_ID, PAD_ID, RESERVED, SEP_ID, UNK_ID,
};
