//! On-disk formats: trajectory datasets, checkpoints and metric logs.

mod checkpoint;
mod dataset;
mod metrics;
mod reader;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use metrics::{read_metric_log, MetricLine, MetricLog};
