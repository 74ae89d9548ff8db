//! Training: terminal cross-entropy through the detached-warm-up forward,
//! depth curricula, warmup/cosine rates with post-transition ramps,
//! clipped AdamW and weight averaging.

mod config;
mod optim;
mod schedule;
mod train;

pub use config::{Milestone, Milestones, RunConfig, TrainConfig};
pub use optim::{clip_gradients, ema_update, global_norm, AdamParams, OptimizerState};
pub use schedule::{
    depth_at, get_target_h, get_target_l, lr_at, lr_transition_mult, progress_percent, CurriculumState,
};
pub use train::{ema_path, run_training, Batch, RunOptions, StepMetrics, TrainSummary, Trainer, IGNORE_LABEL};
