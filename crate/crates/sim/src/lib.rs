//! Deterministic 2D-occupancy navigation world.
//!
//! The world is a grid of free cells, walls and colored landmark blocks. The
//! agent is a point with a ground-plane pose; it sees three raycast views
//! (left, front, right) and moves with four discrete actions. Episodes pair a
//! templated instruction with a shortest-path expert trajectory. All
//! generation is a pure function of the seed.

pub mod episode;
pub mod map;
pub mod nav;
pub mod render;
pub mod store;
pub mod tokenizer;

pub use episode::{generate_episode, Episode, EpisodeConfig};
pub use map::{Cell, Landmark, MapConfig, WorldMap};
pub use nav::{shortest_path, step, Action, DistanceField, Motion, PathResult};
pub use render::{camera_yaws, render, Frame, Observation, RenderConfig};
pub use tokenizer::Tokenizer;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("pose ({x:.3}, {y:.3}) is not inside a free cell")]
    PoseInWall { x: f64, y: f64 },
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("seed {seed}: no reachable landmark after bounded retries")]
    NoReachableLandmark { seed: u64 },
    #[error("episode store: {0}")]
    Store(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
