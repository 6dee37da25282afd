//! Planner, latent video generator, action heads and the fusion bridge that
//! couples them.
//!
//! All components live in one [`ParamStore`](navworld_numerics::ParamStore)
//! under disjoint name prefixes (`planner.`, `codec.`, `dit.`, `former.`,
//! `policy.`, `fusion.`), so training stages freeze or unfreeze them by prefix
//! and checkpoints cover the whole bundle.

pub mod blocks;
pub mod codec;
pub mod config;
pub mod dit;
pub mod flow;
pub mod former;
pub mod fusion;
pub mod model;
pub mod planner;
pub mod policy;
pub mod rope;
pub mod sample;

pub use codec::Codec;
pub use config::ModelConfig;
pub use dit::{Dit, DitState};
pub use former::{former_loss, ActionFormer, AngleMode, FormerLoss, LossWeights};
pub use fusion::FusionTap;
pub use model::{ContextValue, NavModel};
pub use planner::{ContextEmbedding, Planner, PlannerInput, Segment, View};
pub use policy::DiffusionPolicy;
pub use rope::{assign_rope_coords, RopeCoord, SlotRole};
pub use sample::Sample;

use navworld_geometry::GeometryError;
use navworld_numerics::NumericsError;
use navworld_sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown slot role `{0}`")]
    UnknownRole(String),
    #[error("invalid slot layout: {0}")]
    Layout(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: String },
    #[error("fusion is enabled but no video hidden states were supplied")]
    MissingVideoStates,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
