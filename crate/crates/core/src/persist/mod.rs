//! Checkpoints, run configuration and metrics files.

mod checkpoint;
mod metrics_file;
mod run_config;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, OptimizerSnapshot, FORMAT_VERSION, MAGIC,
};
pub use metrics_file::{read_metrics, report_rows, write_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use run_config::{
    load_model_config, DataConfig, FinetuneConfig, PretrainConfig, RunConfig, SCHEMA_VERSION,
};
