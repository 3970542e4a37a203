//! Adam, per-batch objectives, training runs with dev model selection,
//! greedy weight tuning, multi-seed experiments and the gradient-check suite.

mod adam;
mod config;
mod evaluate;
mod experiment;
mod gradcheck;
mod trainer;
mod tune;

pub use adam::Adam;
pub use config::{AdamConfig, LrSchedule, Preset, TrainConfig};
pub use evaluate::{evaluate, report_from_predictions, train_label_counts};
pub use experiment::{run_experiment, ExperimentOutcome};
pub use gradcheck::{objective_suite, run_gradcheck, GradCheckConfig, GradCheckLine, ObjectiveSpec};
pub use trainer::{
    batch_objective, case_objective, prepare, train, EpochRecord, PassCounter, PreparedCase, TrainHistory,
    TrainOutcome, Trainer,
};
pub use tune::{greedy_lambda_tuning, select_candidate, TuningResult, TuningRow, F1_TOLERANCE};
