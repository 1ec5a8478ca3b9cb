//! Shared fixtures for the benchmarks.

use smoothattn::scenarios::ScenarioParams;
use smoothattn::{ModelConfig, ScenarioKind, ScenarioSample};

/// One generated Double Merge episode with the default 22 agents.
pub fn double_merge(seed: u64) -> ScenarioSample {
    let kind = ScenarioKind::DoubleMerge;
    kind.generate(kind.cases()[0], seed, &ScenarioParams::default())
        .expect("default scenario parameters are valid")
}

/// Named model widths benchmarked side by side.
pub fn widths() -> Vec<(&'static str, ModelConfig)> {
    let small = ModelConfig {
        embed_dim: 8,
        hidden_dim: 16,
        attn_dim: 8,
        ..ModelConfig::default()
    };
    vec![("8-16-8", small), ("32-64-32", ModelConfig::default())]
}
