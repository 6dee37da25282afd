use serde::{Deserialize, Serialize};

use crate::{Result, RuntimeError};

/// Sparse foresight: the generator runs only on decision steps `0, k, 2k, …`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfsSchedule {
    pub k: usize,
    /// Actions predicted per planning call.
    pub horizon: usize,
}

impl SfsSchedule {
    pub fn new(k: usize, horizon: usize) -> Result<Self> {
        if k == 0 {
            return Err(RuntimeError::InvalidArgument("SFS interval k must be at least 1".into()));
        }
        if horizon == 0 {
            return Err(RuntimeError::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(Self { k, horizon })
    }

    pub fn is_active(&self, step: usize) -> bool {
        step.is_multiple_of(self.k)
    }

    /// Generator-active steps among the first `decisions`.
    pub fn active_steps(&self, decisions: usize) -> Vec<usize> {
        (0..decisions).step_by(self.k).collect()
    }

    /// Generator invocations over `decisions` steps, `⌈T/k⌉`.
    pub fn calls(&self, decisions: usize) -> usize {
        decisions.div_ceil(self.k)
    }
}
