//! Multi-domain training, evaluation, checkpoints and architecture comparison.

mod analysis;
mod checkpoint;
mod compare;
mod config;
mod loss;
mod metrics;
mod model;
mod train;

pub use analysis::{assignment_divergence, probe_model, ProbeKind};
pub use checkpoint::{
    checkpoint_digest, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_into,
    save_checkpoint, CheckpointHeader,
};
pub use compare::{
    compare_architectures, median, run_jobs, worker_threads, CompareConfig, Comparison, Job,
    RunRow, SummaryRow, THREADS_ENV,
};
pub use config::{Architecture, LrStage, Task, TrainConfig};
pub use loss::{assign_cell, sample_loss};
pub use metrics::{
    accuracy, average_metric, average_precision, detection_map, evaluate, EpochRecord, MetricsLog,
    Summary,
};
pub use model::{decode, Model, Prediction};
pub use train::{build_model, eval_split, evaluate_all, train, TrainOutcome};
