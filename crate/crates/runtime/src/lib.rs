//! Closed-loop evaluation of trained bundles against the simulator: sparse
//! foresight scheduling, receding-horizon rollouts, navigation and image
//! metrics, speed reports, and trajectory/frame dumps.

pub mod bundle;
pub mod dump;
pub mod eval;
pub mod metrics;
pub mod plot;
pub mod rollout;
pub mod sfs;
pub mod speed;

pub use bundle::{load_bundle, Bundle};
pub use eval::{evaluate, random_baseline, Evaluation};
pub use metrics::{nav_metrics, psnr, EpisodeOutcome, NavMetrics, PSNR_CAP};
pub use rollout::{
    choose_action, quantize, random_rollout, rollout, RolloutConfig, RolloutResult, StepRecord, StopReason, Waypoint,
};
pub use sfs::SfsSchedule;
pub use speed::{speed_report, SpeedReport, SpeedRow};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint/config mismatch: {0}")]
    Mismatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] navworld_model::ModelError),
    #[error(transparent)]
    Numerics(#[from] navworld_numerics::NumericsError),
    #[error(transparent)]
    Sim(#[from] navworld_sim::SimError),
    #[error(transparent)]
    Train(#[from] navworld_train::TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Png(#[from] png::EncodingError),
    #[error(transparent)]
    PngDecode(#[from] png::DecodingError),
}

pub type Result<T> = std::result::Result<T, RuntimeError>;
