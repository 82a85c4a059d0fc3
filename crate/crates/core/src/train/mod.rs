//! Mini-batch SGD with a staircase learning-rate schedule, and evaluation.

mod history;
mod metrics;
mod optim;
mod trainer;

pub use history::{EpochRecord, EpochRow, StepRecord, TrainHistory};
pub use metrics::{evaluate, ConfusionCounts, MetricsReport};
pub use optim::{lr_at_step, round_to_f32, sgd_step, Optimizer, Precision};
pub use trainer::{train, TrainConfig, TrainOutput};
