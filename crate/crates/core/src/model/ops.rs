//! Single-agent views of the network's building blocks.
//!
//! These evaluate the same tape code as the batched forward pass on one
//! agent (or one agent's edges) at a time, for inspection and testing.

use std::rc::Rc;

use super::config::ModelConfig;
use super::gaussian::GaussianParams;
use super::network::Network;
use super::params::ModelParams;
use super::scene::AgentState;
use crate::autodiff::{Array, Var};
use crate::error::{Error, Result};

/// Which recurrent stream to step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Interaction,
    SelfLoop,
    Prediction,
}

impl Cell {
    fn layer(self) -> usize {
        match self {
            Cell::Interaction => 5,
            Cell::SelfLoop => 6,
            Cell::Prediction => 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentOutput {
    /// Output passed downstream (equal to the hidden state for an LSTM).
    pub output: Vec<f64>,
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

fn row(net: &mut Network, values: &[f64]) -> Var {
    net.tape
        .constant(Array::from_parts(vec![1, values.len()], values.to_vec()))
}

fn states(net: &mut Network, states: &[AgentState]) -> Var {
    let xy: Vec<f64> = states.iter().flat_map(|s| [s.x, s.y]).collect();
    net.tape.constant(Array::from_parts(vec![states.len(), 2], xy))
}

fn values(net: &Network, v: Var) -> Vec<f64> {
    net.tape.value(v).data().to_vec()
}

/// Edge feature for the ordered pair `(s_i, s_j)`.
pub fn embed_interaction(
    s_i: AgentState,
    s_j: AgentState,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    let mut net = Network::new(params, config, 2, false)?;
    let both = states(&mut net, &[s_i, s_j]);
    let scaled = net.tape.scale(both, config.input_scale);
    let x = net.edge_features(scaled, Rc::from([0usize]), Rc::from([1usize]))?;
    Ok(values(&net, x))
}

/// Self-loop feature of one agent's state change.
pub fn embed_self(
    s_prev: AgentState,
    s_curr: AgentState,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    let mut net = Network::new(params, config, 2, false)?;
    let prev = states(&mut net, &[s_prev]);
    let curr = states(&mut net, &[s_curr]);
    let prev = net.tape.scale(prev, config.input_scale);
    let curr = net.tape.scale(curr, config.input_scale);
    let x = net.self_features(prev, curr)?;
    Ok(values(&net, x))
}

/// One update of a recurrent cell.
pub fn step_recurrent(
    cell: Cell,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<RecurrentOutput> {
    let mut net = Network::new(params, config, 2, false)?;
    let (h, c, x) = (row(&mut net, h_prev), row(&mut net, c_prev), row(&mut net, x));
    let (h, c) = net.recurrent(cell.layer(), x, h, c)?;
    let hidden = values(&net, h);
    Ok(RecurrentOutput {
        output: hidden.clone(),
        hidden,
        cell: values(&net, c),
    })
}

/// Attention of one agent over its edges, in the order given.
pub fn compute_attention(
    o_self: &[f64],
    o_edges: &[Vec<f64>],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    if o_edges.is_empty() {
        return Err(Error::invalid("attention needs at least one edge"));
    }
    let mut net = Network::new(params, config, 2, false)?;
    let own = row(&mut net, o_self);
    let flat: Vec<f64> = o_edges.concat();
    let width = o_edges[0].len();
    if flat.len() != width * o_edges.len() {
        return Err(Error::invalid("edge features differ in width"));
    }
    let edges = net
        .tape
        .constant(Array::from_parts(vec![o_edges.len(), width], flat));
    let theta = net.attention(own, edges, Rc::from(vec![0usize; o_edges.len()]), 1)?;
    Ok(values(&net, theta))
}

/// Prediction cell plus Gaussian head for one agent.
///
/// `s_prev` only matters for the constant-velocity mean anchor.
#[allow(clippy::too_many_arguments)]
pub fn step_prediction(
    h_prev: &[f64],
    c_prev: &[f64],
    s_prev: AgentState,
    s_input: AgentState,
    attended: &[f64],
    o_self: &[f64],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(RecurrentOutput, GaussianParams)> {
    let mut net = Network::new(params, config, 2, false)?;
    let (h, c) = (row(&mut net, h_prev), row(&mut net, c_prev));
    let (att, own) = (row(&mut net, attended), row(&mut net, o_self));
    let prev = states(&mut net, &[s_prev]);
    let curr = states(&mut net, &[s_input]);
    let (h, c, raw, mean) = net.predict_head(curr, (prev, curr), att, own, (h, c))?;
    let r = values(&net, raw);
    let m = values(&net, mean);
    let hidden = values(&net, h);
    Ok((
        RecurrentOutput {
            output: hidden.clone(),
            hidden,
            cell: values(&net, c),
        },
        GaussianParams {
            mean: [m[0], m[1]],
            log_sigma: [r[2], r[3]],
            corr_pre: r[4],
        },
    ))
}
