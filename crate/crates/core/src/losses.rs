//! Gaussian likelihood, variance penalty and attention smoothness losses.
//!
//! Every loss is built on the autodiff tape so training and evaluation share
//! one implementation; the `*_loss` functions wrap that for plain values.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::model::network::{StepVars, Unrolled};
use crate::model::{
    AgentState, AttentionTensor, ForwardOutput, GaussianParams, RolloutOutput, Scene, HEAD_WIDTH,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Trade-offs of the aggregate loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the variance penalties.
    pub beta1: f64,
    /// Weight of the smoothness penalties.
    pub beta2: f64,
    /// Standard deviations at or below this are not penalized.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta1: 0.01,
            beta2: 0.01,
            tau: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return Err(Error::invalid(format!(
                "loss weights must be non-negative, got beta1 {} beta2 {}",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// Every loss component of one scene (or the mean over a batch).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub likelihood_one_step: f64,
    pub likelihood_seq: f64,
    pub var_one_step: f64,
    pub var_seq: f64,
    pub smooth_one_step: f64,
    pub smooth_seq: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str =
        "step,likelihood_one_step,likelihood_seq,var_one_step,var_seq,smooth_one_step,smooth_seq,total";

    /// Sets `total` from the components.
    pub fn compose(mut self, weights: &LossWeights) -> Self {
        self.total = self.likelihood_one_step
            + self.likelihood_seq
            + weights.beta1 * (self.var_one_step + self.var_seq)
            + weights.beta2 * (self.smooth_one_step + self.smooth_seq);
        self
    }

    pub fn components(&self) -> [f64; 7] {
        [
            self.likelihood_one_step,
            self.likelihood_seq,
            self.var_one_step,
            self.var_seq,
            self.smooth_one_step,
            self.smooth_seq,
            self.total,
        ]
    }

    pub fn csv_row(&self, step: usize) -> String {
        let mut row = step.to_string();
        for v in self.components() {
            row.push(',');
            row.push_str(&v.to_string());
        }
        row
    }

    /// Component-wise mean.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut sums = [0.0; 7];
        for item in items {
            for (s, v) in sums.iter_mut().zip(item.components()) {
                *s += v;
            }
        }
        let [a, b, c, d, e, f, g] = sums.map(|s| s / n);
        LossBreakdown {
            likelihood_one_step: a,
            likelihood_seq: b,
            var_one_step: c,
            var_seq: d,
            smooth_one_step: e,
            smooth_seq: f,
            total: g,
        }
    }
}

/// Gaussian negative log-likelihood summed over rows.
///
/// `raw` is `[M × 5]` head output (columns 2..5 hold log σx, log σy and the
/// pre-correlation), `mean` and `target` are `[M × 2]`.
pub(crate) fn likelihood_on_tape(tape: &mut Tape, raw: Var, mean: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(target, mean)?;
    let dx = tape.slice(diff, 1, 0, 1)?;
    let dy = tape.slice(diff, 1, 1, 1)?;
    let log_sx = tape.slice(raw, 1, 2, 1)?;
    let log_sy = tape.slice(raw, 1, 3, 1)?;
    let pre = tape.slice(raw, 1, 4, 1)?;
    let rho = tape.tanh(pre)?;
    let rho2 = tape.square(rho)?;
    let neg_rho2 = tape.neg(rho2)?;
    let one_minus = tape.shift(neg_rho2, 1.0);

    let inv_sx = tape.neg(log_sx)?;
    let inv_sx = tape.exp(inv_sx)?;
    let inv_sy = tape.neg(log_sy)?;
    let inv_sy = tape.exp(inv_sy)?;
    let zx = tape.mul(dx, inv_sx)?;
    let zy = tape.mul(dy, inv_sy)?;
    let zx2 = tape.square(zx)?;
    let zy2 = tape.square(zy)?;
    let cross = tape.mul(zx, zy)?;
    let cross = tape.mul(cross, rho)?;
    let cross = tape.scale(cross, 2.0);
    let q = tape.add(zx2, zy2)?;
    let q = tape.sub(q, cross)?;
    let q = tape.div(q, one_minus)?;
    let q = tape.scale(q, 0.5);

    let log_det = tape.log(one_minus)?;
    let log_det = tape.scale(log_det, 0.5);
    let nll = tape.add(log_sx, log_sy)?;
    let nll = tape.add(nll, log_det)?;
    let nll = tape.add(nll, q)?;
    let nll = tape.shift(nll, LN_2PI);
    Ok(tape.sum(nll))
}

/// `Σ exp(σ)` over the standard deviations above `tau`; the gate is constant.
pub(crate) fn variance_on_tape(tape: &mut Tape, raw: Var, tau: f64) -> Result<Var> {
    let log_sigma = tape.slice(raw, 1, 2, 2)?;
    let sigma = tape.exp(log_sigma)?;
    let gate = tape
        .value(sigma)
        .map(|s| if s > tau { 1.0 } else { 0.0 });
    let gate = tape.constant(gate);
    let penalty = tape.exp(sigma)?;
    let penalty = tape.mul(penalty, gate)?;
    Ok(tape.sum(penalty))
}

/// Total variation of attention rows over consecutive steps.
pub(crate) fn smoothness_on_tape(tape: &mut Tape, thetas: &[Var]) -> Result<Var> {
    if thetas.len() < 2 {
        return Ok(tape.constant(Array::scalar(0.0)));
    }
    let rows = tape.shape(thetas[0]).first().copied().unwrap_or(0);
    let stacked = tape.concat(thetas, 0)?;
    let span = rows * (thetas.len() - 1);
    let before = tape.slice(stacked, 0, 0, span)?;
    let after = tape.slice(stacked, 0, rows, span)?;
    let diff = tape.sub(after, before)?;
    let norm2 = tape.row_dot(diff, diff)?;
    let norm = tape.safe_sqrt(norm2)?;
    Ok(tape.sum(norm))
}

fn check_covariances(tape: &Tape, raw: Var, first_step: usize, agents: usize) -> Result<()> {
    for (row, r) in tape.value(raw).data().chunks(HEAD_WIDTH).enumerate() {
        let g = GaussianParams {
            mean: [0.0, 0.0],
            log_sigma: [r[2], r[3]],
            corr_pre: r[4],
        };
        if g.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite {
                step: first_step + row / agents,
                agent: row % agents,
            });
        }
    }
    Ok(())
}

fn gaussians_to_tape(tape: &mut Tape, gaussians: &[Vec<GaussianParams>]) -> Result<(Var, Var)> {
    let rows: usize = gaussians.iter().map(Vec::len).sum();
    let mut raw = Vec::with_capacity(rows * HEAD_WIDTH);
    let mut mean = Vec::with_capacity(rows * 2);
    for (t, step) in gaussians.iter().enumerate() {
        for (i, g) in step.iter().enumerate() {
            if g.cholesky().is_none() {
                return Err(Error::NotPositiveDefinite { step: t, agent: i });
            }
            raw.extend([0.0, 0.0, g.log_sigma[0], g.log_sigma[1], g.corr_pre]);
            mean.extend(g.mean);
        }
    }
    Ok((
        tape.constant(Array::new(vec![rows, HEAD_WIDTH], raw)?),
        tape.constant(Array::new(vec![rows, 2], mean)?),
    ))
}

/// Negative log-likelihood of `targets[t][i]` under `gaussians[t][i]`,
/// summed over agents and steps.
pub fn likelihood_loss(targets: &[Vec<AgentState>], gaussians: &[Vec<GaussianParams>]) -> Result<f64> {
    if targets.len() != gaussians.len()
        || targets.iter().zip(gaussians).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::invalid("targets and gaussians differ in shape"));
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let (raw, mean) = gaussians_to_tape(&mut tape, gaussians)?;
    let flat: Vec<f64> = targets.iter().flatten().flat_map(|s| [s.x, s.y]).collect();
    let target = tape.constant(Array::new(vec![flat.len() / 2, 2], flat)?);
    let loss = likelihood_on_tape(&mut tape, raw, mean, target)?;
    Ok(tape.value(loss).item())
}

/// `Σ exp(σ_k)·[σ_k > τ]` over agents, steps and both axes.
pub fn variance_loss(gaussians: &[Vec<GaussianParams>], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if gaussians.iter().all(Vec::is_empty) {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let (raw, _) = gaussians_to_tape(&mut tape, gaussians)?;
    let loss = variance_on_tape(&mut tape, raw, tau)?;
    Ok(tape.value(loss).item())
}

/// Vectorial total variation of attention over time.
pub fn smoothness_loss(theta: &AttentionTensor) -> f64 {
    let mut tape = Tape::new();
    let (n, k) = (theta.agents(), theta.others());
    let steps: Vec<Var> = (0..theta.steps())
        .map(|t| tape.constant(Array::from_parts(vec![n, k], theta.step(t).to_vec())))
        .collect();
    let loss = smoothness_on_tape(&mut tape, &steps).expect("attention steps share a shape");
    tape.value(loss).item()
}

/// All loss components from separately computed teacher-forced and rollout
/// passes over `scene`.
pub fn total_loss(
    scene: &Scene,
    teacher: &ForwardOutput,
    rollout: &RolloutOutput,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    require_horizon(scene)?;
    let (steps, obs) = (scene.steps(), scene.observed());
    if teacher.gaussians.len() != steps || rollout.gaussians.len() != steps {
        return Err(Error::invalid("forward passes do not match the scene length"));
    }
    let truth = |range: std::ops::Range<usize>| -> Vec<Vec<AgentState>> {
        range.map(|t| scene.frame(t).to_vec()).collect()
    };
    let breakdown = LossBreakdown {
        likelihood_one_step: likelihood_loss(&truth(1..steps), &teacher.gaussians[..steps - 1])?,
        likelihood_seq: likelihood_loss(&truth(obs..steps), &rollout.gaussians[obs - 1..steps - 1])?,
        var_one_step: variance_loss(&teacher.gaussians[..steps - 1], weights.tau)?,
        var_seq: variance_loss(&rollout.gaussians[obs - 1..steps - 1], weights.tau)?,
        smooth_one_step: smoothness_loss(&teacher.attention),
        smooth_seq: smoothness_loss(&rollout.attention.steps_range(obs - 1, steps)),
        total: 0.0,
    };
    Ok(breakdown.compose(weights))
}

fn require_horizon(scene: &Scene) -> Result<()> {
    if scene.horizon() == 0 {
        return Err(Error::InvalidScene(format!(
            "scene {} has no steps after the observed prefix",
            scene.id()
        )));
    }
    Ok(())
}

/// Loss graph on top of an unrolled scene.
pub(crate) struct LossGraph {
    pub(crate) total: Var,
    pub(crate) breakdown: LossBreakdown,
}

fn scored(tape: &mut Tape, outs: &[StepVars]) -> Result<(Var, Var)> {
    let raws: Vec<Var> = outs.iter().map(|o| o.raw).collect();
    let means: Vec<Var> = outs.iter().map(|o| o.mean).collect();
    Ok((tape.concat(&raws, 0)?, tape.concat(&means, 0)?))
}

fn targets(tape: &mut Tape, scene: &Scene, range: std::ops::Range<usize>) -> Result<Var> {
    let rows = (range.end - range.start) * scene.agents();
    let data = range.flat_map(|t| scene.frame_xy(t)).collect();
    Ok(tape.constant(Array::new(vec![rows, 2], data)?))
}

/// Adds every loss term for `scene` to the tape. Sequence terms are zero when
/// the graph has no rollout; smoothness terms are zero when `smooth` is off.
pub(crate) fn build_loss(
    graph: &mut Unrolled,
    scene: &Scene,
    weights: &LossWeights,
    smooth: bool,
) -> Result<LossGraph> {
    weights.validate()?;
    require_horizon(scene)?;
    let (steps, obs, n) = (scene.steps(), scene.observed(), scene.agents());
    let tape = &mut graph.net.tape;
    let zero = tape.constant(Array::scalar(0.0));

    let (raw, mean) = scored(tape, &graph.teacher[..steps - 1])?;
    check_covariances(tape, raw, 0, n)?;
    let truth = targets(tape, scene, 1..steps)?;
    let lik1 = likelihood_on_tape(tape, raw, mean, truth)?;
    let var1 = variance_on_tape(tape, raw, weights.tau)?;

    let (lik_seq, var_seq) = if graph.rollout.is_empty() {
        (zero, zero)
    } else {
        let (raw, mean) = scored(tape, &graph.rollout[..steps - obs])?;
        check_covariances(tape, raw, obs - 1, n)?;
        let truth = targets(tape, scene, obs..steps)?;
        (
            likelihood_on_tape(tape, raw, mean, truth)?,
            variance_on_tape(tape, raw, weights.tau)?,
        )
    };

    let (smooth1, smooth_seq) = if smooth {
        let thetas: Vec<Var> = graph.teacher.iter().map(|o| o.theta).collect();
        let s1 = smoothness_on_tape(tape, &thetas)?;
        let thetas: Vec<Var> = graph.rollout.iter().map(|o| o.theta).collect();
        (s1, smoothness_on_tape(tape, &thetas)?)
    } else {
        (zero, zero)
    };

    let lik = tape.add(lik1, lik_seq)?;
    let var = tape.add(var1, var_seq)?;
    let var = tape.scale(var, weights.beta1);
    let sm = tape.add(smooth1, smooth_seq)?;
    let sm = tape.scale(sm, weights.beta2);
    let total = tape.add(lik, var)?;
    let total = tape.add(total, sm)?;

    let item = |v: Var| tape.value(v).item();
    let breakdown = LossBreakdown {
        likelihood_one_step: item(lik1),
        likelihood_seq: item(lik_seq),
        var_one_step: item(var1),
        var_seq: item(var_seq),
        smooth_one_step: item(smooth1),
        smooth_seq: item(smooth_seq),
        total: item(total),
    };
    Ok(LossGraph { total, breakdown })
}
