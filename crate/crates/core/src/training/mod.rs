//! Two-phase SGD pretraining, evaluation, metrics and checkpoints.

mod checkpoint;
mod config;
mod evaluate;
mod metrics;
mod optim;
mod trainer;

#[cfg(test)]
mod tests;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Counters, FORMAT_VERSION,
    MAGIC,
};
pub use config::{Mode, PhaseConfig, TrainConfig};
pub use evaluate::{count_correct, evaluate, EvalResult};
pub use metrics::{read_metrics, write_metrics, MetricsRecord, MetricsWriter, METRICS_HEADER};
pub use optim::{lr_at_step, sgd_step, OptimizerState};
pub use trainer::{effective_masking, effective_model_config, run_pretraining, Event, PretrainOutcome, Trainer};
