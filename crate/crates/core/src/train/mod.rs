//! Ranking-loss training with Adam and linear warm-up.

pub mod adam;
pub mod loss;
pub mod schedule;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use loss::{hinge_distance, ranking_loss, LabelSet, LossNorm};
pub use schedule::warmup_lr;
pub use trainer::{batch_loss, EpochStats, Example, TrainConfig, Trainer};
