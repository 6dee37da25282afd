//! Minimal dense-tensor substrate: tape-based reverse-mode autodiff, the
//! transformer building blocks used by the navigation models, AdamW, a
//! finite-difference gradient oracle and the checkpoint container.
//!
//! Everything runs single-threaded with fixed reduction order, so a forward
//! pass is bit-reproducible for a given seed. Models are generic over
//! [`Scalar`]: `f64` for gradient checks, `f32` for training.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{NumericsError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, RopeTable, Unary, Var};
pub use nn::{timestep_embed, LayerNorm, Linear, Mlp, MultiHeadAttention, RopePair, TimestepEmbedder};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use params::{Builder, Init, Param, ParamId, ParamStore};
pub use tensor::{DType, Scalar, Tensor};
