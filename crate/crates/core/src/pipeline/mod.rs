//! Training, evaluation, experiment drivers and report files.

pub mod config;
pub mod evaluate;
pub mod experiments;
pub mod model;
pub mod report;
pub mod train;

pub use config::{TrainConfig, Variant, LEARNING_RATE_GRID};
pub use evaluate::{evaluate, mann_whitney_less, median, EvalReport, RankTest};
pub use experiments::{
    ablate, gradient_suite, learning_rate_sweep, run_noise_sweep, run_trials, AblationRow,
    GradientCheckRow, LearningRateRow, NoiseRow, GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
pub use model::{forward, ForwardOptions};
pub use train::{train, train_from, TrainOutcome};
