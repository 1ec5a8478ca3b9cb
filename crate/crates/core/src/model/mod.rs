//! Scenes, model weights and the recurrent attention predictor.

mod config;
mod gaussian;
pub(crate) mod network;
mod ops;
mod params;
mod scene;

pub use config::{MeanAnchor, ModelConfig, RolloutSampling};
pub use gaussian::{column, other_agent, AttentionTensor, GaussianParams};
pub use network::{
    forward_teacher_forced, forward_teacher_forced_with, predict, rollout, rollout_with,
    AttentionMode, ForwardOutput, Prediction, RolloutOutput,
};
pub use ops::{
    compute_attention, embed_interaction, embed_self, step_prediction, step_recurrent, Cell,
    RecurrentOutput,
};
pub use params::{Checkpoint, Layer, ModelParams, HEAD_WIDTH};
pub use scene::{AgentState, Scene};

#[cfg(test)]
mod tests;
