//! The graph-structured recurrent predictor.
//!
//! Every ordered agent pair `(i, j)` is an edge with its own recurrent state;
//! all edges of a scene are processed as one batch. Edge `e = i·(N−1) + k`
//! connects agent `i` to its `k`-th other agent (see [`other_agent`]).

use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{MeanAnchor, ModelConfig, RolloutSampling};
use super::gaussian::{other_agent, AttentionTensor, GaussianParams};
use super::params::{ModelParams, HEAD_WIDTH};
use super::scene::{AgentState, Scene};
use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};

/// Where attention weights come from.
#[derive(Clone, Copy, Debug)]
pub enum AttentionMode<'a> {
    /// Softmax over inner products of the attention embeddings.
    Learned,
    /// Uniform over the other agents (no gradient).
    Uniform,
    /// Externally supplied weights (no gradient); steps past the end of the
    /// tensor reuse its last step.
    Fixed(&'a AttentionTensor),
}

#[derive(Clone, Copy, Debug)]
struct LayerVars {
    weight: Var,
    bias: Var,
}

/// Model weights registered on a tape, in [`ModelParams::names`] order.
#[derive(Clone, Debug)]
pub(crate) struct ParamVars {
    pub(crate) all: [Var; 16],
}

impl ParamVars {
    fn layer(&self, k: usize) -> LayerVars {
        LayerVars {
            weight: self.all[2 * k],
            bias: self.all[2 * k + 1],
        }
    }
}

/// Recurrent state carried between steps.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Recurrent {
    edge_h: Var,
    edge_c: Var,
    self_h: Var,
    self_c: Var,
    pred_h: Var,
    pred_c: Var,
}

/// Tape handles produced by one step: attention `[N × (N−1)]`, raw head
/// output `[N × 5]` and the anchored mean `[N × 2]` of the next state.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StepVars {
    pub(crate) theta: Var,
    pub(crate) raw: Var,
    pub(crate) mean: Var,
}

/// A forward graph over one scene.
pub(crate) struct Network<'a> {
    pub(crate) tape: Tape,
    pub(crate) params: ParamVars,
    config: &'a ModelConfig,
    agents: usize,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
}

impl<'a> Network<'a> {
    /// `trainable` registers the weights as differentiable leaves. `agents`
    /// fixes the edge layout used by [`Network::step`].
    pub(crate) fn new(
        params: &ModelParams,
        config: &'a ModelConfig,
        agents: usize,
        trainable: bool,
    ) -> Result<Self> {
        config.validate()?;
        params.check_shapes(config)?;
        if agents < 2 {
            return Err(Error::InvalidScene(format!(
                "attention needs at least 2 agents, got {agents}"
            )));
        }
        let mut tape = Tape::new();
        let arrays = params.arrays();
        let all = std::array::from_fn(|k| {
            let a = arrays[k].clone();
            if trainable {
                tape.leaf(a)
            } else {
                tape.constant(a)
            }
        });
        let k = agents - 1;
        let src: Rc<[usize]> = (0..agents * k).map(|e| e / k).collect();
        let dst: Rc<[usize]> = (0..agents * k).map(|e| other_agent(e / k, e % k)).collect();
        Ok(Network {
            tape,
            params: ParamVars { all },
            config,
            agents,
            src,
            dst,
        })
    }

    fn dst(&self) -> Rc<[usize]> {
        self.dst.clone()
    }

    pub(crate) fn initial_state(&mut self) -> Recurrent {
        let n = self.agents;
        let e = n * (n - 1);
        let h = self.config.hidden_dim;
        let mut zeros = |rows: usize| self.tape.constant(Array::zeros(&[rows, h]));
        Recurrent {
            edge_h: zeros(e),
            edge_c: zeros(e),
            self_h: zeros(n),
            self_c: zeros(n),
            pred_h: zeros(n),
            pred_c: zeros(n),
        }
    }

    pub(crate) fn frame(&mut self, scene: &Scene, t: usize) -> Var {
        let n = scene.agents();
        self.tape
            .constant(Array::from_parts(vec![n, 2], scene.frame_xy(t)))
    }

    fn dense(&mut self, x: Var, layer: LayerVars, activate: bool) -> Result<Var> {
        let y = self.tape.affine(x, layer.weight, layer.bias)?;
        if activate {
            self.tape.tanh(y)
        } else {
            Ok(y)
        }
    }

    fn lstm(&mut self, input: Var, h: Var, c: Var, cell: LayerVars) -> Result<(Var, Var)> {
        let joined = self.tape.concat(&[input, h], 1)?;
        let pre = self.dense(joined, cell, false)?;
        let gates = self.tape.lstm_gates(pre)?;
        let c = self.tape.lstm_cell(gates, c)?;
        let h = self.tape.lstm_output(gates, c)?;
        Ok((h, c))
    }

    fn layer(&self, k: usize) -> LayerVars {
        self.params.layer(k)
    }

    /// Edge features `tanh(F_interact([s_i | s_j]))` for scaled states.
    pub(crate) fn edge_features(&mut self, curr_s: Var, src: Rc<[usize]>, dst: Rc<[usize]>) -> Result<Var> {
        let from = self.tape.gather_rows(curr_s, src)?;
        let to = self.tape.gather_rows(curr_s, dst)?;
        let pair = self.tape.concat(&[from, to], 1)?;
        self.dense(pair, self.layer(0), true)
    }

    /// Self-loop features `tanh(F_self([s_prev | s]))` for scaled states.
    pub(crate) fn self_features(&mut self, prev_s: Var, curr_s: Var) -> Result<Var> {
        let change = self.tape.concat(&[prev_s, curr_s], 1)?;
        self.dense(change, self.layer(1), true)
    }

    /// One recurrent update with cell `k` (5: edges, 6: self-loops, 7: prediction).
    pub(crate) fn recurrent(&mut self, k: usize, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        self.lstm(x, h, c, self.layer(k))
    }

    /// Softmax over `⟨F_attn(o_self_i), F_attn(o_edge)⟩` for the edges of
    /// each agent; `src[e]` is the agent owning edge `e`.
    pub(crate) fn attention(&mut self, self_h: Var, edge_h: Var, src: Rc<[usize]>, rows: usize) -> Result<Var> {
        let attn = self.layer(3);
        let key_self = self.dense(self_h, attn, true)?;
        let key_edge = self.dense(edge_h, attn, true)?;
        let query = self.tape.gather_rows(key_self, src)?;
        let logits = self.tape.row_dot(query, key_edge)?;
        let cols = self.tape.shape(logits)[0] / rows.max(1);
        let logits = self.tape.reshape(logits, &[rows, cols])?;
        self.tape.softmax(logits)
    }

    /// Prediction cell and Gaussian head. `curr` is the input state and
    /// `anchor` the `(t − 1, t)` states the mean is anchored to. Returns the
    /// new prediction state, the raw head output and the anchored mean.
    pub(crate) fn predict_head(
        &mut self,
        curr: Var,
        anchor: (Var, Var),
        attended: Var,
        self_h: Var,
        pred_state: (Var, Var),
    ) -> Result<(Var, Var, Var, Var)> {
        let curr_s = self.tape.scale(curr, self.config.input_scale);
        let emb = self.dense(curr_s, self.layer(2), true)?;
        let input = self.tape.concat(&[emb, attended, self_h], 1)?;
        let (pred_h, pred_c) = self.recurrent(7, input, pred_state.0, pred_state.1)?;
        let raw = self.dense(pred_h, self.layer(4), false)?;
        let offset = self.tape.slice(raw, 1, 0, 2)?;
        let (prev, base) = anchor;
        let mean = match self.config.mean_anchor {
            MeanAnchor::Absolute => offset,
            MeanAnchor::Position => self.tape.add(base, offset)?,
            MeanAnchor::ConstantVelocity => {
                let velocity = self.tape.sub(base, prev)?;
                let extrapolated = self.tape.add(base, velocity)?;
                self.tape.add(extrapolated, offset)?
            }
        };
        Ok((pred_h, pred_c, raw, mean))
    }

    /// One step: consumes the states at `t − 1` and `t` (both `[N × 2]`) and
    /// emits attention at `t` and the Gaussian for `t + 1`.
    pub(crate) fn step(
        &mut self,
        prev: Var,
        curr: Var,
        state: Recurrent,
        attention: Option<Array>,
    ) -> Result<(Recurrent, StepVars)> {
        self.step_anchored(prev, curr, (prev, curr), state, attention)
    }

    /// [`Network::step`] with the mean anchored to `anchor` instead of the
    /// input states. Rollouts anchor to the predicted means so that sampling
    /// noise in the inputs is not extrapolated as velocity.
    pub(crate) fn step_anchored(
        &mut self,
        prev: Var,
        curr: Var,
        anchor: (Var, Var),
        state: Recurrent,
        attention: Option<Array>,
    ) -> Result<(Recurrent, StepVars)> {
        let scale = self.config.input_scale;
        let prev_s = self.tape.scale(prev, scale);
        let curr_s = self.tape.scale(curr, scale);
        let src = self.src.clone();
        let x_edge = self.edge_features(curr_s, src.clone(), self.dst())?;
        let x_self = self.self_features(prev_s, curr_s)?;
        let (edge_h, edge_c) = self.recurrent(5, x_edge, state.edge_h, state.edge_c)?;
        let (self_h, self_c) = self.recurrent(6, x_self, state.self_h, state.self_c)?;
        let theta = match attention {
            None => self.attention(self_h, edge_h, src, self.agents)?,
            Some(fixed) => self.tape.constant(fixed),
        };
        let attended = self.tape.attend(theta, edge_h)?;
        let (pred_h, pred_c, raw, mean) =
            self.predict_head(curr, anchor, attended, self_h, (state.pred_h, state.pred_c))?;
        let next = Recurrent {
            edge_h,
            edge_c,
            self_h,
            self_c,
            pred_h,
            pred_c,
        };
        Ok((next, StepVars { theta, raw, mean }))
    }

    /// Attention weights to force at step `t`, or `None` for learned attention.
    pub(crate) fn forced_attention(&self, mode: AttentionMode, t: usize) -> Result<Option<Array>> {
        let n = self.agents;
        match mode {
            AttentionMode::Learned => Ok(None),
            AttentionMode::Uniform => Ok(Some(Array::filled(&[n, n - 1], 1.0 / (n - 1) as f64))),
            AttentionMode::Fixed(tensor) => {
                if tensor.agents() != n || tensor.steps() == 0 {
                    return Err(Error::invalid(format!(
                        "fixed attention has {} agents x {} steps, scene has {n} agents",
                        tensor.agents(),
                        tensor.steps()
                    )));
                }
                let s = t.min(tensor.steps() - 1);
                Ok(Some(Array::from_parts(vec![n, n - 1], tensor.step(s).to_vec())))
            }
        }
    }

    pub(crate) fn gaussians(&self, out: &StepVars) -> Vec<GaussianParams> {
        let raw = self.tape.value(out.raw).data();
        let mean = self.tape.value(out.mean).data();
        (0..self.agents)
            .map(|i| {
                let r = &raw[i * HEAD_WIDTH..(i + 1) * HEAD_WIDTH];
                GaussianParams {
                    mean: [mean[2 * i], mean[2 * i + 1]],
                    log_sigma: [r[2], r[3]],
                    corr_pre: r[4],
                }
            })
            .collect()
    }

    /// Next input state drawn from the Gaussian of `out`.
    ///
    /// `eps` holds `N × 2` standard normal draws; `None` propagates the mean.
    pub(crate) fn sample(&mut self, out: &StepVars, eps: Option<Vec<f64>>, step: usize) -> Result<Var> {
        let Some(eps) = eps else {
            return Ok(out.mean);
        };
        for (agent, g) in self.gaussians(out).iter().enumerate() {
            if g.cholesky().is_none() {
                return Err(Error::NotPositiveDefinite { step, agent });
            }
        }
        let n = self.agents;
        let e1 = self
            .tape
            .constant(Array::from_parts(vec![n, 1], eps.iter().step_by(2).copied().collect()));
        let e2 = self.tape.constant(Array::from_parts(
            vec![n, 1],
            eps.iter().skip(1).step_by(2).copied().collect(),
        ));
        let t = &mut self.tape;
        let log_sx = t.slice(out.raw, 1, 2, 1)?;
        let log_sy = t.slice(out.raw, 1, 3, 1)?;
        let pre = t.slice(out.raw, 1, 4, 1)?;
        let sx = t.exp(log_sx)?;
        let sy = t.exp(log_sy)?;
        let rho = t.tanh(pre)?;
        let rho2 = t.square(rho)?;
        let rest = t.neg(rho2)?;
        let rest = t.shift(rest, 1.0);
        let rest = t.sqrt(rest)?;
        // L·ε with L = [[σx, 0], [ρσy, σy√(1−ρ²)]].
        let dx = t.mul(sx, e1)?;
        let a = t.mul(rho, e1)?;
        let b = t.mul(rest, e2)?;
        let ab = t.add(a, b)?;
        let dy = t.mul(sy, ab)?;
        let delta = t.concat(&[dx, dy], 1)?;
        t.add(out.mean, delta)
    }
}

pub(crate) fn standard_normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn validate_scene(scene: &Scene) -> Result<()> {
    if scene.agents() < 2 {
        return Err(Error::InvalidScene("needs at least 2 agents".into()));
    }
    Ok(())
}

/// Per-step Gaussians and attention of a forward pass.
///
/// `gaussians[t][i]` is the prediction for agent `i` at step `t + 1` made
/// from inputs up to step `t`; attention row `t` is the attention at step `t`.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub gaussians: Vec<Vec<GaussianParams>>,
    pub attention: AttentionTensor,
}

#[derive(Clone, Debug)]
pub struct RolloutOutput {
    pub gaussians: Vec<Vec<GaussianParams>>,
    pub attention: AttentionTensor,
    /// Input state fed at every step: ground truth up to the observed
    /// horizon, sampled (or mean) predictions afterwards.
    pub inputs: Vec<Vec<AgentState>>,
}

fn to_states(values: &[f64]) -> Vec<AgentState> {
    values
        .chunks(2)
        .map(|p| AgentState::new(p[0], p[1]))
        .collect()
}

/// Teacher-forced pass: ground-truth inputs at every step.
pub fn forward_teacher_forced(
    scene: &Scene,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ForwardOutput> {
    forward_teacher_forced_with(scene, params, config, AttentionMode::Learned)
}

pub fn forward_teacher_forced_with(
    scene: &Scene,
    params: &ModelParams,
    config: &ModelConfig,
    mode: AttentionMode,
) -> Result<ForwardOutput> {
    validate_scene(scene)?;
    let mut net = Network::new(params, config, scene.agents(), false)?;
    let mut state = net.initial_state();
    let mut prev = net.frame(scene, 0);
    let mut gaussians = Vec::with_capacity(scene.steps());
    let mut thetas = Vec::with_capacity(scene.steps());
    for t in 0..scene.steps() {
        let curr = net.frame(scene, t);
        let forced = net.forced_attention(mode, t)?;
        let (next, out) = net.step(prev, curr, state, forced)?;
        gaussians.push(net.gaussians(&out));
        thetas.push(net.tape.value(out.theta).data().to_vec());
        state = next;
        prev = curr;
    }
    Ok(ForwardOutput {
        gaussians,
        attention: AttentionTensor::from_steps(scene.agents(), thetas),
    })
}

/// Rollout beyond the observed horizon, feeding back predictions.
///
/// With [`RolloutSampling::Reparameterized`] the inputs are drawn from the
/// predicted Gaussians using a generator seeded by `seed`.
pub fn rollout(
    scene: &Scene,
    params: &ModelParams,
    config: &ModelConfig,
    seed: u64,
) -> Result<RolloutOutput> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rollout_with(scene, params, config, AttentionMode::Learned, &mut rng)
}

pub fn rollout_with(
    scene: &Scene,
    params: &ModelParams,
    config: &ModelConfig,
    mode: AttentionMode,
    rng: &mut impl Rng,
) -> Result<RolloutOutput> {
    validate_scene(scene)?;
    let n = scene.agents();
    let mut net = Network::new(params, config, n, false)?;
    let mut state = net.initial_state();
    let mut prev = net.frame(scene, 0);
    let mut last: Option<StepVars> = None;
    let mut anchor = (prev, prev);
    let mut gaussians = Vec::with_capacity(scene.steps());
    let mut thetas = Vec::with_capacity(scene.steps());
    let mut inputs = Vec::with_capacity(scene.steps());
    for t in 0..scene.steps() {
        let curr = match last {
            Some(out) if t >= scene.observed() => {
                let eps = match config.rollout_sampling {
                    RolloutSampling::Mean => None,
                    RolloutSampling::Reparameterized => Some(standard_normals(rng, 2 * n)),
                };
                anchor = (anchor.1, out.mean);
                net.sample(&out, eps, t)?
            }
            _ => {
                let frame = net.frame(scene, t);
                anchor = (prev, frame);
                frame
            }
        };
        inputs.push(to_states(net.tape.value(curr).data()));
        let forced = net.forced_attention(mode, t)?;
        let (next, out) = net.step_anchored(prev, curr, anchor, state, forced)?;
        gaussians.push(net.gaussians(&out));
        thetas.push(net.tape.value(out.theta).data().to_vec());
        state = next;
        prev = curr;
        last = Some(out);
    }
    Ok(RolloutOutput {
        gaussians,
        attention: AttentionTensor::from_steps(n, thetas),
        inputs,
    })
}

/// Mean-propagated forecast from the observed prefix of a scene.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `positions[h][i]`: predicted position of agent `i` at step
    /// `observed + h`.
    pub positions: Vec<Vec<AgentState>>,
    /// Attention for steps `0 .. observed + horizon − 1`.
    pub attention: AttentionTensor,
}

/// Forecasts `horizon` steps after the first `scene.observed()` steps.
///
/// Only the observed prefix of `scene` is read. The prefix is centered on its
/// first-step centroid for the network and predictions are mapped back.
pub fn predict(
    scene: &Scene,
    horizon: usize,
    params: &ModelParams,
    config: &ModelConfig,
    mode: AttentionMode,
) -> Result<Prediction> {
    if horizon < 1 {
        return Err(Error::invalid("prediction horizon must be >= 1"));
    }
    let observed = scene.observed();
    if observed < 2 {
        return Err(Error::invalid(format!(
            "prediction needs at least 2 observed steps, got {observed}"
        )));
    }
    validate_scene(scene)?;
    let origin = scene.first_centroid();
    let centered = scene.translated(-origin.x, -origin.y);
    let n = scene.agents();
    let mut net = Network::new(params, config, n, false)?;
    let mut state = net.initial_state();
    let mut prev = net.frame(&centered, 0);
    let mut last: Option<StepVars> = None;
    let mut thetas = Vec::new();
    let mut positions = Vec::with_capacity(horizon);
    for t in 0..observed + horizon - 1 {
        let curr = match last {
            Some(out) if t >= observed => out.mean,
            _ => net.frame(&centered, t),
        };
        let forced = net.forced_attention(mode, t)?;
        let (next, out) = net.step(prev, curr, state, forced)?;
        thetas.push(net.tape.value(out.theta).data().to_vec());
        if t + 1 >= observed {
            let mean = net.tape.value(out.mean).data();
            positions.push(
                to_states(mean)
                    .into_iter()
                    .map(|s| AgentState::new(s.x + origin.x, s.y + origin.y))
                    .collect(),
            );
        }
        state = next;
        prev = curr;
        last = Some(out);
    }
    Ok(Prediction {
        positions,
        attention: AttentionTensor::from_steps(n, thetas),
    })
}

/// Teacher-forced and rolled-out passes over one scene on a shared tape.
pub(crate) struct Unrolled<'a> {
    pub(crate) net: Network<'a>,
    /// One entry per step `0..T`.
    pub(crate) teacher: Vec<StepVars>,
    /// Steps `observed − 1 .. T`; the first entry is shared with `teacher`
    /// because both passes consume ground truth up to there. Empty when no
    /// rollout was requested.
    pub(crate) rollout: Vec<StepVars>,
}

/// Builds the training graph. `rollout_rng` enables the rollout pass; its
/// feedback follows `config.rollout_sampling`.
pub(crate) fn unroll<'a>(
    scene: &Scene,
    params: &ModelParams,
    config: &'a ModelConfig,
    mode: AttentionMode,
    rollout_rng: Option<&mut rand_chacha::ChaCha8Rng>,
    trainable: bool,
) -> Result<Unrolled<'a>> {
    validate_scene(scene)?;
    let n = scene.agents();
    let obs = scene.observed();
    let mut net = Network::new(params, config, n, trainable)?;
    let mut state = net.initial_state();
    let mut prev = net.frame(scene, 0);
    let mut teacher = Vec::with_capacity(scene.steps());
    let mut branch = None;
    for t in 0..scene.steps() {
        let curr = net.frame(scene, t);
        let forced = net.forced_attention(mode, t)?;
        let (next, out) = net.step(prev, curr, state, forced)?;
        teacher.push(out);
        if t + 1 == obs {
            branch = Some((prev, curr, next));
        }
        state = next;
        prev = curr;
    }
    let mut rollout = Vec::new();
    if let (Some(rng), Some((before, mut prev, mut state))) = (rollout_rng, branch) {
        let mut last = teacher[obs - 1];
        let mut anchor = (before, prev);
        rollout.push(last);
        for t in obs..scene.steps() {
            let eps = match config.rollout_sampling {
                RolloutSampling::Mean => None,
                RolloutSampling::Reparameterized => Some(standard_normals(rng, 2 * n)),
            };
            let curr = net.sample(&last, eps, t)?;
            anchor = (anchor.1, last.mean);
            let forced = net.forced_attention(mode, t)?;
            let (next, out) = net.step_anchored(prev, curr, anchor, state, forced)?;
            rollout.push(out);
            state = next;
            prev = curr;
            last = out;
        }
    }
    Ok(Unrolled {
        net,
        teacher,
        rollout,
    })
}
