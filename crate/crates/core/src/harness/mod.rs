//! Training, evaluation and experiment plumbing around the model.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradsuite;
pub mod model;
pub mod optim;
pub mod render;
pub mod train;

pub use config::ExperimentConfig;
pub use model::{BevModel, Forward, TopDownHead};
pub use train::{StepLog, TrainState, Trainer};
