//! Staged training for the navigation world model: data sampling, the
//! optimizer loop with JSON-lines logging and checkpoints, and overfit probes.

pub mod config;
pub mod data;
pub mod probe;
pub mod trainer;

pub use config::{Stage, TrainConfig, Variant};
pub use data::{episode_config, generate_episodes, Dataset};
pub use probe::{overfit, ProbeConfig, ProbeReport, ProbeTarget};
pub use trainer::{batch_losses, draw_gamma, BatchItem, BatchLosses, StepLog, Trainer};

use navworld_model::ModelError;
use navworld_numerics::NumericsError;
use navworld_sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {component} at step {step}")]
    NonFinite { step: u64, component: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;
