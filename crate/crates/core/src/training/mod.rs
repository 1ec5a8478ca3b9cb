//! Adam training of the predictor, baseline variants and repeated runs.

mod adam;

pub use adam::{adam_step, AdamConfig, Moments};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_ade, MetricReport, RunMetrics};
use crate::losses::{build_loss, LossBreakdown, LossWeights};
use crate::model::network::unroll;
use crate::model::{AttentionMode, Checkpoint, ModelConfig, ModelParams, RolloutSampling};
use crate::scenarios::{Dataset, ScenarioSample};
use crate::seed::{derive_seed, stream_rng};

/// Which losses and attention a training run uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full objective with learned attention.
    #[default]
    Ours,
    /// One-step losses only: no rollout, no smoothness.
    SAttn,
    /// Sequence losses without smoothness.
    NonSmooth,
    /// Attention fixed to uniform.
    Average,
    /// Attention fixed to the scenario oracle; smoothness skipped.
    Correct,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Ours,
        Variant::SAttn,
        Variant::NonSmooth,
        Variant::Average,
        Variant::Correct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ours => "ours",
            Variant::SAttn => "s_attn",
            Variant::NonSmooth => "non_smooth",
            Variant::Average => "average",
            Variant::Correct => "correct",
        }
    }

    pub fn uses_rollout(self) -> bool {
        self != Variant::SAttn
    }

    /// Whether the smoothness terms are built at all (they may still carry
    /// zero weight).
    pub fn builds_smoothness(self) -> bool {
        self != Variant::Correct
    }

    /// Loss weights after the variant's overrides.
    pub fn weights(self, base: LossWeights) -> LossWeights {
        match self {
            Variant::SAttn | Variant::NonSmooth => LossWeights { beta2: 0.0, ..base },
            _ => base,
        }
    }

    /// Attention source for one sample.
    pub fn attention_mode(self, sample: &ScenarioSample) -> Result<AttentionMode<'_>> {
        match self {
            Variant::Average => Ok(AttentionMode::Uniform),
            Variant::Correct => sample
                .correct_attention
                .as_ref()
                .map(AttentionMode::Fixed)
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "variant correct needs oracle attention, scene {} has none",
                        sample.scene.id()
                    ))
                }),
            _ => Ok(AttentionMode::Learned),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown variant {s:?} (expected ours, s_attn, non_smooth, average or correct)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub tau: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    pub adam: AdamConfig,
    pub rollout_sampling: RolloutSampling,
    /// Rescale the batch gradient to at most this global L2 norm.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            tau: 1e-3,
            beta1: 0.01,
            beta2: 0.01,
            batch_size: 8,
            epochs: 200,
            seed: 0,
            variant: Variant::Ours,
            adam: AdamConfig::default(),
            rollout_sampling: RolloutSampling::Reparameterized,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(Error::invalid(format!(
                "batch_size and epochs must be >= 1, got {} and {}",
                self.batch_size, self.epochs
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.adam.validate()?;
        self.loss_weights().validate()
    }

    /// Loss weights with the variant applied.
    pub fn loss_weights(&self) -> LossWeights {
        self.variant.weights(LossWeights {
            beta1: self.beta1,
            beta2: self.beta2,
            tau: self.tau,
        })
    }
}

/// Contents of a configuration file: `[train]` and `[model]` tables, both
/// optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl ConfigFile {
    pub fn from_toml(text: &str, origin: &Path) -> Result<ConfigFile> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Format {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        file.train.validate()?;
        file.model.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConfigFile::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(e.to_string()))
    }
}

/// Batch-mean losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based optimizer step.
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch.
    pub epoch: usize,
    /// Mean total loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean-mode ADE on the validation split, if it is non-empty.
    pub val_ade: Option<f64>,
    /// Whether this epoch's weights are the retained checkpoint.
    pub best: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainLog {
    pub fn steps_csv(&self) -> String {
        let mut out = format!("epoch,{}\n", LossBreakdown::CSV_HEADER);
        for r in &self.steps {
            out.push_str(&format!("{},{}\n", r.epoch, r.loss.csv_row(r.step)));
        }
        out
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_ade,best\n");
        for r in &self.epochs {
            let val = r.val_ade.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!("{},{},{val},{}\n", r.epoch, r.train_loss, u8::from(r.best)));
        }
        out
    }
}

/// Hooks into a training run; every method defaults to doing nothing.
pub trait TrainObserver {
    /// Every attention row emitted while building a scene's loss.
    fn on_attention(&mut self, _step: usize, _scene: &str, _agents: usize, _theta: &[f64]) {}
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl TrainObserver for () {}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights of the best validation epoch (last epoch without validation).
    pub params: ModelParams,
    pub last_params: ModelParams,
    /// Model configuration actually trained (with the run's rollout sampling).
    pub config: ModelConfig,
    pub best_epoch: usize,
    pub log: TrainLog,
}

pub const BEST_CHECKPOINT: &str = "best.json";
pub const LAST_CHECKPOINT: &str = "last.json";
pub const STEPS_LOG: &str = "train_log.csv";
pub const EPOCHS_LOG: &str = "epochs.csv";

impl TrainOutcome {
    /// Writes checkpoints and logs into `dir` and records the checkpoint
    /// paths in the log.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for (name, params) in [(BEST_CHECKPOINT, &self.params), (LAST_CHECKPOINT, &self.last_params)] {
            let path = dir.join(name);
            Checkpoint {
                config: self.config.clone(),
                params: params.clone(),
            }
            .save(&path)?;
            paths.push(path);
        }
        for (name, text) in [(STEPS_LOG, self.log.steps_csv()), (EPOCHS_LOG, self.log.epochs_csv())] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        self.log.checkpoints = paths;
        Ok(())
    }
}

fn check_dataset(dataset: &Dataset, variant: Variant) -> Result<()> {
    if dataset.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    for sample in dataset.train.iter().chain(&dataset.val) {
        variant.attention_mode(sample)?;
    }
    for sample in dataset.train.iter().chain(&dataset.val) {
        if sample.scene.horizon() < 1 {
            return Err(Error::InvalidScene(format!(
                "scene {} has no predicted steps (observed {} of {})",
                sample.scene.id(),
                sample.scene.observed(),
                sample.scene.steps()
            )));
        }
    }
    Ok(())
}

struct SceneGradient {
    loss: LossBreakdown,
    grads: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn scene_gradient(
    sample: &ScenarioSample,
    params: &ModelParams,
    config: &ModelConfig,
    cfg: &TrainConfig,
    rollout_rng: &mut rand_chacha::ChaCha8Rng,
    step: usize,
    observer: &mut dyn TrainObserver,
) -> Result<SceneGradient> {
    let scene = sample.scene.centered();
    let variant = cfg.variant;
    let rng = if variant.uses_rollout() { Some(rollout_rng) } else { None };
    let mut graph = unroll(&scene, params, config, variant.attention_mode(sample)?, rng, true)?;
    let loss = build_loss(&mut graph, &scene, &cfg.loss_weights(), variant.builds_smoothness())?;
    for out in graph.teacher.iter().chain(graph.rollout.iter().skip(1)) {
        observer.on_attention(step, scene.id(), scene.agents(), graph.net.tape.value(out.theta).data());
    }
    let value = loss.breakdown.total;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { step, value });
    }
    let tape = &graph.net.tape;
    let all = tape.backward(loss.total)?;
    let grads: Vec<Vec<f64>> = graph
        .net
        .params
        .all
        .iter()
        .map(|&v| all.wrt(tape, v).data().to_vec())
        .collect();
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { step, value: f64::NAN });
    }
    Ok(SceneGradient {
        loss: loss.breakdown,
        grads,
    })
}

/// Loss of one sample and its gradient for every parameter, exactly as a
/// training step computes them. Rollout noise (if sampled) is seeded by
/// `rollout_seed`. The gradient has the shapes of `params`.
pub fn loss_gradient(
    sample: &ScenarioSample,
    params: &ModelParams,
    model: &ModelConfig,
    cfg: &TrainConfig,
    rollout_seed: u64,
) -> Result<(LossBreakdown, ModelParams)> {
    cfg.validate()?;
    let config = ModelConfig {
        rollout_sampling: cfg.rollout_sampling,
        ..model.clone()
    };
    params.check_shapes(&config)?;
    let mut rng = stream_rng(rollout_seed, "rollout", 0);
    let g = scene_gradient(sample, params, &config, cfg, &mut rng, 0, &mut ())?;
    let mut grads = params.clone();
    for (array, values) in grads.arrays_mut().into_iter().zip(g.grads) {
        array.data_mut().copy_from_slice(&values);
    }
    Ok((g.loss, grads))
}

/// Trains from a seeded initialization; see [`train_observed`].
pub fn train(dataset: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(dataset, model, cfg, &mut ())
}

/// Mini-batch Adam over the training split.
///
/// Each step minimizes the batch mean of the per-scene total loss. The
/// training order is reshuffled every epoch. After every epoch the weights
/// are scored by mean-mode ADE on the validation split and the best epoch is
/// retained. Initialization, shuffling and rollout noise use separate
/// streams derived from `cfg.seed`.
pub fn train_observed(
    dataset: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(dataset, cfg.variant)?;
    let config = ModelConfig {
        rollout_sampling: cfg.rollout_sampling,
        ..model.clone()
    };
    config.validate()?;
    let mut params = ModelParams::init(&config, derive_seed(cfg.seed, "init", 0));
    let mut moments: Vec<Moments> = params.arrays().iter().map(|a| Moments::zeros(a.len())).collect();
    let mut rollout_rng = stream_rng(cfg.seed, "rollout", 0);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, "shuffle", epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let mut sum: Vec<Vec<f64>> = params.arrays().iter().map(|a| vec![0.0; a.len()]).collect();
            let mut losses = Vec::with_capacity(batch.len());
            for &k in batch {
                let g = scene_gradient(&dataset.train[k], &params, &config, cfg, &mut rollout_rng, step, observer)?;
                for (s, g) in sum.iter_mut().zip(&g.grads) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
                losses.push(g.loss);
            }
            let scale = 1.0 / batch.len() as f64;
            sum.iter_mut().flatten().for_each(|g| *g *= scale);
            if let Some(limit) = cfg.grad_clip {
                let norm = sum.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
                if norm > limit {
                    sum.iter_mut().flatten().for_each(|g| *g *= limit / norm);
                }
            }
            for ((array, grads), m) in params.arrays_mut().into_iter().zip(&sum).zip(&mut moments) {
                adam_step(array.data_mut(), grads, m, cfg.learning_rate, &cfg.adam)?;
            }
            let record = StepRecord {
                step,
                epoch,
                loss: LossBreakdown::mean(&losses),
            };
            observer.on_step(&record);
            epoch_loss += record.loss.total;
            batches += 1;
            log.steps.push(record);
        }
        let val_ade = if dataset.val.is_empty() {
            None
        } else {
            Some(mean_ade(&dataset.val, &params, &config, cfg.variant)?)
        };
        // Without validation the latest weights are kept; NaN never wins.
        let score = val_ade.map_or(f64::NEG_INFINITY, |v| if v.is_nan() { f64::INFINITY } else { v });
        let improved = best.as_ref().map_or(true, |(b, _, _)| score < *b || score == f64::NEG_INFINITY);
        if improved {
            best = Some((score, epoch, params.clone()));
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_ade,
            best: improved,
        };
        observer.on_epoch(&record);
        log.epochs.push(record);
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params: best_params,
        last_params: params,
        config,
        best_epoch,
        log,
    })
}

/// One training run of an experiment and its test metrics.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub metrics: RunMetrics,
}

/// Runs of one variant and the resulting report.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub runs: Vec<RunResult>,
    pub report: MetricReport,
}

/// `n_runs` independent trainings with seeds `cfg.seed + k`, each scored on
/// the test split with its retained checkpoint.
pub fn run_experiment(
    dataset: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    n_runs: usize,
) -> Result<Experiment> {
    run_experiment_with(dataset, model, cfg, n_runs, |_, _| ())
}

/// [`run_experiment`] calling `on_run(k, &result)` as each run finishes.
pub fn run_experiment_with(
    dataset: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    n_runs: usize,
    mut on_run: impl FnMut(usize, &RunResult),
) -> Result<Experiment> {
    if n_runs < 1 {
        return Err(Error::invalid("n_runs must be >= 1"));
    }
    if dataset.test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let mut runs = Vec::with_capacity(n_runs);
    for k in 0..n_runs {
        let seed = cfg.seed.wrapping_add(k as u64);
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let outcome = train(dataset, model, &run_cfg)?;
        let metrics = evaluate(&dataset.test, &outcome.params, &outcome.config, cfg.variant)?;
        let result = RunResult { seed, outcome, metrics };
        on_run(k, &result);
        runs.push(result);
    }
    let report = MetricReport::new(
        cfg.variant,
        runs.iter().map(|r| r.seed).collect(),
        dataset.test.iter().map(|s| s.scene.id().to_string()).collect(),
        runs.iter().map(|r| r.metrics.clone()).collect(),
    )?;
    Ok(Experiment { runs, report })
}

#[cfg(test)]
mod tests;
