//! Multi-agent trajectory forecasting with smooth, sparse attention.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod scenarios;
pub mod seed;
pub mod model;
pub mod training;

pub use autodiff::{Array, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use eval::{evaluate, MetricReport, RunMetrics};
pub use model::{AgentState, AttentionTensor, Checkpoint, GaussianParams, ModelConfig, ModelParams, Scene};
pub use scenarios::{Case, Dataset, DatasetSpec, ScenarioKind, ScenarioSample, Split};
pub use training::{train, TrainConfig, TrainOutcome, Variant};
