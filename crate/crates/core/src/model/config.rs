use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How predicted states are fed back during a rollout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutSampling {
    /// Propagate the predicted mean.
    Mean,
    /// Draw `μ + L·ε` with `L` the Cholesky factor of `Σ`; differentiable in `μ, Σ`.
    #[default]
    Reparameterized,
}

/// What the first two outputs of the prediction head are relative to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanAnchor {
    /// The head emits the mean position directly.
    Absolute,
    /// Offset from the current state.
    Position,
    /// Offset from a constant-velocity extrapolation `2·s_t − s_{t−1}`.
    #[default]
    ConstantVelocity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub rollout_sampling: RolloutSampling,
    pub mean_anchor: MeanAnchor,
    /// Positions are multiplied by this before entering the embedding layers.
    pub input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden_dim: 64,
            attn_dim: 32,
            rollout_sampling: RolloutSampling::default(),
            mean_anchor: MeanAnchor::default(),
            input_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.attn_dim == 0 {
            return Err(Error::invalid(format!(
                "model widths must be >= 1, got embed {} hidden {} attn {}",
                self.embed_dim, self.hidden_dim, self.attn_dim
            )));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::invalid(format!(
                "input_scale must be positive, got {}",
                self.input_scale
            )));
        }
        Ok(())
    }
}
