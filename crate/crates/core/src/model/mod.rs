//! BERT-style encoder with a masked-token head and a masked-position head.
//!
//! Both heads run on packed rows: only the hidden vectors of masked slots
//! are gathered into a dense `[M, hidden]` block before classification.

mod config;
mod forward;
mod weights;

pub use config::ModelConfig;
pub use forward::{
    argmax_rows, embed_forward, encoder_forward, gather_slots, mlm_head_forward,
    position_head_forward, pretrain_forward, Bound, EncoderTrace, ForwardOptions, ForwardOutput,
    Losses, IGNORE_INDEX,
};
pub use weights::{parameter_layout, truncated_normal, DenseIds, LayerIds, ModelWeights, WeightIds};
