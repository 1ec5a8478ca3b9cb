//! Displacement errors, attention diagnostics, significance tests, reports
//! and plots.

mod plot;
mod report;
mod stats;

pub use plot::{attention_timeline_csv, attention_timeline_svg, trajectory_svg, TimelineSeries};
pub use report::{compare_variants, Comparison, ComparisonRow, MetricReport, CaseSummary, Summary};
pub use stats::{
    ln_gamma, mean_std, regularized_incomplete_beta, student_t_two_sided, welch_t_test, WelchTest,
};

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict, AgentState, AttentionTensor, ModelConfig, ModelParams, Scene};
use crate::scenarios::ScenarioSample;
use crate::training::Variant;

/// Euclidean errors `[h][i]` of a forecast covering steps
/// `observed .. steps` of `truth`.
pub fn displacement_errors(pred: &[Vec<AgentState>], truth: &Scene) -> Result<Vec<Vec<f64>>> {
    if pred.len() != truth.horizon() || pred.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "displacement_errors",
            lhs: vec![pred.len(), pred.first().map_or(0, Vec::len)],
            rhs: vec![truth.horizon(), truth.agents()],
        });
    }
    pred.iter()
        .enumerate()
        .map(|(h, row)| {
            if row.len() != truth.agents() {
                return Err(Error::ShapeMismatch {
                    op: "displacement_errors",
                    lhs: vec![pred.len(), row.len()],
                    rhs: vec![truth.horizon(), truth.agents()],
                });
            }
            let actual = truth.frame(truth.observed() + h);
            Ok(row.iter().zip(actual).map(|(p, q)| p.distance(q)).collect())
        })
        .collect()
}

fn select(errors: &[Vec<f64>], agents: Option<&[usize]>) -> Result<Vec<Vec<f64>>> {
    match agents {
        None => Ok(errors.to_vec()),
        Some(list) => {
            let n = errors[0].len();
            if list.is_empty() || list.iter().any(|&i| i >= n) {
                return Err(Error::invalid(format!("agent subset {list:?} invalid for {n} agents")));
            }
            Ok(errors.iter().map(|row| list.iter().map(|&i| row[i]).collect()).collect())
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Mean displacement over all agents and predicted steps.
pub fn ade(pred: &[Vec<AgentState>], truth: &Scene) -> Result<f64> {
    ade_of(pred, truth, None)
}

/// Mean final-step displacement over all agents.
pub fn fde(pred: &[Vec<AgentState>], truth: &Scene) -> Result<f64> {
    fde_of(pred, truth, None)
}

/// [`ade`] restricted to `agents` (all agents when `None`).
pub fn ade_of(pred: &[Vec<AgentState>], truth: &Scene, agents: Option<&[usize]>) -> Result<f64> {
    let errors = select(&displacement_errors(pred, truth)?, agents)?;
    Ok(mean(errors.iter().flatten().copied()))
}

/// [`fde`] restricted to `agents` (all agents when `None`).
pub fn fde_of(pred: &[Vec<AgentState>], truth: &Scene, agents: Option<&[usize]>) -> Result<f64> {
    let errors = select(&displacement_errors(pred, truth)?, agents)?;
    Ok(mean(errors.last().expect("non-empty horizon").iter().copied()))
}

/// Attention paid by selected agents to their oracle target.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCorrectness {
    pub agents: Vec<usize>,
    /// `per_step[k][t]`: weight agent `agents[k]` puts on its oracle target.
    pub per_step: Vec<Vec<f64>>,
    /// Mean of `per_step[k]` over the window, `None` if the window is empty.
    pub window_mean: Vec<Option<f64>>,
}

/// For every listed agent and step, the mass `theta` assigns to the agent
/// the oracle attends to most.
pub fn attention_correctness(
    theta: &AttentionTensor,
    oracle: &AttentionTensor,
    window: Range<usize>,
    agents: &[usize],
) -> Result<AttentionCorrectness> {
    if theta.steps() != oracle.steps() || theta.agents() != oracle.agents() {
        return Err(Error::ShapeMismatch {
            op: "attention_correctness",
            lhs: vec![theta.steps(), theta.agents()],
            rhs: vec![oracle.steps(), oracle.agents()],
        });
    }
    if let Some(&bad) = agents.iter().find(|&&i| i >= theta.agents()) {
        return Err(Error::invalid(format!("agent {bad} out of range")));
    }
    let window = window.start.min(theta.steps())..window.end.min(theta.steps());
    let mut per_step = Vec::with_capacity(agents.len());
    let mut window_mean = Vec::with_capacity(agents.len());
    for &i in agents {
        let series: Vec<f64> = (0..theta.steps())
            .map(|t| {
                let row = oracle.row(t, i);
                let target = (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best });
                theta.row(t, i)[target]
            })
            .collect();
        window_mean.push((!window.is_empty()).then(|| mean(series[window.clone()].iter().copied())));
        per_step.push(series);
    }
    Ok(AttentionCorrectness {
        agents: agents.to_vec(),
        per_step,
        window_mean,
    })
}

/// Test metrics of one case in one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub scenes: usize,
    pub ade: f64,
    pub fde: f64,
    /// Over the two main vehicles; `None` without labels.
    pub main_ade: Option<f64>,
    pub main_fde: Option<f64>,
    /// Mean attention of the rear main vehicle on the front one inside the
    /// highlighted window.
    pub attention_correctness: Option<f64>,
}

/// Per-case metrics keyed by case name (`all` for unlabeled samples).
pub type RunMetrics = BTreeMap<String, CaseMetrics>;

/// Mean-mode forecasts of every sample, scored per case.
pub fn evaluate(
    samples: &[ScenarioSample],
    params: &ModelParams,
    config: &ModelConfig,
    variant: Variant,
) -> Result<RunMetrics> {
    #[derive(Default)]
    struct Acc {
        ade: Vec<f64>,
        fde: Vec<f64>,
        main_ade: Vec<f64>,
        main_fde: Vec<f64>,
        correct: Vec<f64>,
    }
    let mut by_case: BTreeMap<String, Acc> = BTreeMap::new();
    for sample in samples {
        let scene = &sample.scene;
        let mode = variant.attention_mode(sample)?;
        let forecast = predict(scene, scene.horizon(), params, config, mode)?;
        let acc = by_case
            .entry(sample.case.map_or("all".to_string(), |c| c.to_string()))
            .or_default();
        acc.ade.push(ade(&forecast.positions, scene)?);
        acc.fde.push(fde(&forecast.positions, scene)?);
        if let Some(main) = sample.main_agents {
            acc.main_ade.push(ade_of(&forecast.positions, scene, Some(&main))?);
            acc.main_fde.push(fde_of(&forecast.positions, scene, Some(&main))?);
            if let (Some(oracle), Some(window)) = (&sample.correct_attention, &sample.highlight) {
                let oracle = oracle.steps_range(0, forecast.attention.steps());
                let c = attention_correctness(&forecast.attention, &oracle, window.clone(), &main[..1])?;
                if let Some(m) = c.window_mean[0] {
                    acc.correct.push(m);
                }
            }
        }
    }
    let opt = |v: &[f64]| (!v.is_empty()).then(|| mean(v.iter().copied()));
    Ok(by_case
        .into_iter()
        .map(|(case, acc)| {
            let metrics = CaseMetrics {
                scenes: acc.ade.len(),
                ade: mean(acc.ade.iter().copied()),
                fde: mean(acc.fde.iter().copied()),
                main_ade: opt(&acc.main_ade),
                main_fde: opt(&acc.main_fde),
                attention_correctness: opt(&acc.correct),
            };
            (case, metrics)
        })
        .collect())
}

/// Mean ADE over samples, all agents.
pub fn mean_ade(
    samples: &[ScenarioSample],
    params: &ModelParams,
    config: &ModelConfig,
    variant: Variant,
) -> Result<f64> {
    let mut values = Vec::with_capacity(samples.len());
    for sample in samples {
        let scene = &sample.scene;
        let forecast = predict(scene, scene.horizon(), params, config, variant.attention_mode(sample)?)?;
        values.push(ade(&forecast.positions, scene)?);
    }
    Ok(mean(values.into_iter()))
}
