use std::fmt;
use std::str::FromStr;

use navworld_model::{AngleMode, LossWeights};
use serde::{Deserialize, Serialize};

use crate::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Video generator and codec alone.
    #[serde(rename = "1a")]
    Video,
    /// Policy head alone.
    #[serde(rename = "1b")]
    Policy,
    /// Everything jointly.
    #[serde(rename = "2")]
    Joint,
}

impl FromStr for Stage {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1a" => Ok(Self::Video),
            "1b" => Ok(Self::Policy),
            "2" => Ok(Self::Joint),
            _ => Err(TrainError::Config(format!("unknown stage `{s}` (expected 1a, 1b or 2)"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Video => "1a",
            Self::Policy => "1b",
            Self::Joint => "2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Former,
    Diffusion,
}

impl FromStr for Variant {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "former" => Ok(Self::Former),
            "diffusion" => Ok(Self::Diffusion),
            _ => Err(TrainError::Config(format!(
                "unknown variant `{s}` (expected former or diffusion)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Former => "former",
            Self::Diffusion => "diffusion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub variant: Variant,
    /// Weight of the policy loss in the joint objective.
    pub lambda: f64,
    /// Per-sample probability of running the fusion taps in joint training.
    pub mmfca_prob: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub lr_floor_frac: f64,
    pub warmup: u64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 saves only at the end.
    pub checkpoint_every: u64,
    /// Weight of the codec reconstruction term while the codec trains.
    pub recon_weight: f64,
    /// Action Former term weights and angle mode.
    pub former_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Video,
            variant: Variant::Former,
            lambda: 1.0,
            mmfca_prob: 0.5,
            batch_size: 8,
            steps: 5000,
            lr: 1e-3,
            lr_floor_frac: 0.1,
            warmup: 100,
            weight_decay: 0.01,
            seed: 0,
            checkpoint_every: 0,
            recon_weight: 1.0,
            former_weights: LossWeights {
                pos: 1.0,
                angle: 1.0,
                arrive: 1.0,
                angle_mode: AngleMode::Normalized,
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return Err(TrainError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.mmfca_prob) {
            return Err(TrainError::Config(format!(
                "mmfca_prob must lie in [0, 1], got {}",
                self.mmfca_prob
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Whether a parameter is updated in this stage.
    pub fn trains(&self, name: &str) -> bool {
        let head = match self.variant {
            Variant::Former => "former.",
            Variant::Diffusion => "policy.",
        };
        match self.stage {
            Stage::Video => name.starts_with("dit.") || name.starts_with("codec."),
            Stage::Policy => name.starts_with(head),
            Stage::Joint => {
                name.starts_with("planner.")
                    || name.starts_with("codec.")
                    || name.starts_with("dit.")
                    || name.starts_with(head)
                    || (self.variant == Variant::Diffusion && name.starts_with("fusion."))
            }
        }
    }
}
