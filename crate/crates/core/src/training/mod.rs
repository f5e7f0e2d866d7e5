//! Losses and the two-stage training pipeline.

mod config;
mod data;
mod global;
mod local;
mod losses;
mod pipeline;
mod state;

pub use config::{LrSchedule, Stage, TrainConfig};
pub use data::{
    default_test_set, full_trajectory, gen_dataset, local_batch, pairs_of, PairBatch, Split, TEST_SEED,
    UNSEEN_MAZE_BASE,
};
pub use global::{eval_global, global_samples, train_global, GlobalSample, GlobalStats};
pub use local::{batches_per_epoch, ensure_parent, eval_pairs, train_local, zero_motion_stats, PairStats, RunPaths};
pub use losses::{global_loss, local_loss};
pub use pipeline::{item_seed, Item, Pipeline, PipelineConfig};
pub use state::{
    build_checkpoint, config_from_checkpoint, local_meta_poses, model_params, progress_of, restore, GlobalModel,
    LocalModel, LocalRun, Progress,
};
