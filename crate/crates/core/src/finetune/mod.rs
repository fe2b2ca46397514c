//! Synthetic span extraction: locate a key token and return the span of the
//! announced length that starts there. Used to compare the two attention
//! dropout gradient modes after pretraining.

mod config;
mod data;
mod head;
mod metrics;
mod run;


pub use config::FinetuneConfig;
pub use data::{
    generate_span_dataset, length_token, min_span_seq_len, sample_span_example, valid_starts, SpanExample,
    BODY_START, KEY_MIN, LENGTH_TOKEN_BASE, MAX_SPAN_LEN,
};
pub use head::{span_forward, span_head_forward, SpanForward};
pub use metrics::{
    aggregate, evaluate_span, predict_span, predict_spans, score_predictions, score_span, write_predictions,
    SeedAverage, SpanMetrics, SpanPrediction, EVAL_BATCH_SIZE,
};
pub use run::{
    prepare_weights, probe_softmax_gradients, run_finetune, softmax_gradient_norms, EpochReport, FinetuneOutcome,
    SoftmaxProbe,
};
