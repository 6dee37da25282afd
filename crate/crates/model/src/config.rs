use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

/// Architecture hyper-parameters shared by every component of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// View resolution `V` (square).
    pub resolution: usize,
    /// Patch size `P`; frames become `(V/P)²` tokens.
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub vocab: usize,
    pub max_instruction: usize,
    pub planner_blocks: usize,
    /// Past front frames `k`.
    pub history: usize,
    /// Action horizon `N` (also the number of former queries).
    pub horizon: usize,
    /// Predicted future front frames.
    pub future_frames: usize,
    pub latent_channels: usize,
    pub dit_blocks: usize,
    pub former_blocks: usize,
    /// Diffusion-policy blocks; even indices self-attend, odd indices cross-attend to C.
    pub policy_blocks: usize,
    /// Sinusoidal feature width fed to the timestep embedders.
    pub freq_dim: usize,
    pub rope_base: f64,
    /// Noise level applied to conditioning latents.
    pub t_cond: f64,
    pub sample_steps: usize,
    /// Whether MMFCA taps are built at all.
    pub fusion: bool,
}

impl ModelConfig {
    /// The reference desk-scale configuration.
    pub fn desk() -> Self {
        Self {
            resolution: 32,
            patch: 8,
            dim: 128,
            heads: 4,
            mlp_ratio: 4,
            vocab: 32,
            max_instruction: 12,
            planner_blocks: 4,
            history: 4,
            horizon: 5,
            future_frames: 5,
            latent_channels: 16,
            dit_blocks: 6,
            former_blocks: 2,
            policy_blocks: 8,
            freq_dim: 64,
            rope_base: 100.0,
            t_cond: 0.05,
            sample_steps: 8,
            fusion: true,
        }
    }

    /// A reduced configuration that trains in minutes on one CPU core.
    pub fn small() -> Self {
        Self {
            resolution: 16,
            dim: 32,
            heads: 2,
            mlp_ratio: 2,
            planner_blocks: 2,
            latent_channels: 8,
            dit_blocks: 2,
            former_blocks: 2,
            policy_blocks: 4,
            freq_dim: 32,
            sample_steps: 4,
            ..Self::desk()
        }
    }

    /// Smallest configuration used by gradient checks.
    pub fn micro() -> Self {
        Self {
            resolution: 8,
            patch: 4,
            dim: 12,
            heads: 1,
            mlp_ratio: 1,
            vocab: 32,
            max_instruction: 4,
            planner_blocks: 1,
            history: 1,
            horizon: 2,
            future_frames: 1,
            latent_channels: 2,
            dit_blocks: 1,
            former_blocks: 1,
            policy_blocks: 2,
            freq_dim: 4,
            rope_base: 100.0,
            t_cond: 0.05,
            sample_steps: 2,
            fusion: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.patch == 0 || !self.resolution.is_multiple_of(self.patch) {
            return bad(format!(
                "resolution {} is not a multiple of patch {}",
                self.resolution, self.patch
            ));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        let head = self.dim / self.heads;
        if !head.is_multiple_of(2) || head / 2 < 3 {
            return bad(format!("head dimension {head} cannot be split into three rotary groups"));
        }
        if !self.freq_dim.is_multiple_of(2) {
            return bad("freq_dim must be even".into());
        }
        if self.horizon == 0 || self.future_frames == 0 {
            return bad("horizon and future_frames must be positive".into());
        }
        if !(0.0..1.0).contains(&self.t_cond) {
            return bad("t_cond must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Latent grid side `V/P`.
    pub fn grid(&self) -> usize {
        self.resolution / self.patch
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// Context length `L` = instruction tokens + (k + 3) frame groups.
    pub fn context_len(&self) -> usize {
        self.max_instruction + (self.history + 3) * self.tokens_per_frame()
    }

    pub fn mlp_hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    /// Indices of policy blocks that cross-attend to C.
    pub fn policy_cross_blocks(&self) -> Vec<usize> {
        (0..self.policy_blocks).filter(|i| i % 2 == 1).collect()
    }

    /// `(policy block, generator block)` pairs exchanging information, aligned
    /// from the end of both stacks.
    pub fn fusion_pairs(&self) -> Vec<(usize, usize)> {
        if !self.fusion {
            return Vec::new();
        }
        let cross = self.policy_cross_blocks();
        let n = cross.len().min(self.dit_blocks);
        (0..n)
            .map(|p| (cross[cross.len() - n + p], self.dit_blocks - n + p))
            .collect()
    }

    /// Stable hash of the serialized configuration, stored in checkpoints.
    pub fn hash(&self) -> String {
        navworld_numerics::checkpoint::config_hash(&serde_json::to_string(self).expect("config serializes"))
    }
}
