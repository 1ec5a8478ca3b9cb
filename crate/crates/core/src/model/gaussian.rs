use crate::error::{Error, Result};

/// Bivariate Gaussian emitted by the prediction head.
///
/// The covariance is parameterized by log standard deviations and a
/// pre-correlation `c` with `ρ = tanh(c)`, which keeps it positive-definite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: [f64; 2],
    pub log_sigma: [f64; 2],
    pub corr_pre: f64,
}

impl GaussianParams {
    pub fn sigma(&self) -> [f64; 2] {
        [self.log_sigma[0].exp(), self.log_sigma[1].exp()]
    }

    pub fn rho(&self) -> f64 {
        self.corr_pre.tanh()
    }

    /// `[[σx², ρσxσy], [ρσxσy, σy²]]`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [sx, sy] = self.sigma();
        let off = self.rho() * sx * sy;
        [[sx * sx, off], [off, sy * sy]]
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> Option<[[f64; 2]; 2]> {
        let [sx, sy] = self.sigma();
        let rho = self.rho();
        let rest = 1.0 - rho * rho;
        if !(sx > 0.0 && sy > 0.0 && rest > 0.0 && sx.is_finite() && sy.is_finite()) {
            return None;
        }
        Some([[sx, 0.0], [rho * sy, sy * rest.sqrt()]])
    }

    pub fn is_positive_definite(&self) -> bool {
        let c = self.covariance();
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        det > 0.0 && c[0][0] + c[1][1] > 0.0
    }
}

/// Attention of every agent over the other agents, per step.
///
/// Row `(t, i)` has `N − 1` entries for the other agents in ascending index
/// order (agent `i` itself is skipped).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTensor {
    steps: usize,
    agents: usize,
    data: Vec<f64>,
}

impl AttentionTensor {
    pub fn new(steps: usize, agents: usize, data: Vec<f64>) -> Result<Self> {
        if agents < 2 || data.len() != steps * agents * (agents - 1) {
            return Err(Error::invalid(format!(
                "attention tensor of {steps} steps x {agents} agents cannot hold {} values",
                data.len()
            )));
        }
        Ok(AttentionTensor {
            steps,
            agents,
            data,
        })
    }

    /// Every row uniform over the other agents.
    pub fn uniform(steps: usize, agents: usize) -> Result<Self> {
        if agents < 2 {
            return Err(Error::invalid("attention needs at least 2 agents"));
        }
        let k = agents - 1;
        AttentionTensor::new(steps, agents, vec![1.0 / k as f64; steps * agents * k])
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn others(&self) -> usize {
        self.agents - 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// All rows of one step, `N × (N − 1)` row-major.
    pub fn step(&self, t: usize) -> &[f64] {
        let w = self.agents * self.others();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        let k = self.others();
        &self.step(t)[i * k..(i + 1) * k]
    }

    /// Weight agent `i` puts on agent `j` at step `t` (`j ≠ i`).
    pub fn weight(&self, t: usize, i: usize, j: usize) -> f64 {
        self.row(t, i)[column(i, j)]
    }

    /// Steps `start..end` as a new tensor.
    pub fn steps_range(&self, start: usize, end: usize) -> AttentionTensor {
        let w = self.agents * self.others();
        AttentionTensor {
            steps: end - start,
            agents: self.agents,
            data: self.data[start * w..end * w].to_vec(),
        }
    }

    pub(crate) fn from_steps(agents: usize, steps: Vec<Vec<f64>>) -> Self {
        let n = steps.len();
        AttentionTensor {
            steps: n,
            agents,
            data: steps.concat(),
        }
    }

    /// Maximum deviation of any row sum from one, and whether every weight is
    /// non-negative.
    pub fn normalization_error(&self) -> (f64, bool) {
        let k = self.others();
        let mut worst = 0.0f64;
        for row in self.data.chunks(k) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        (worst, self.data.iter().all(|&v| v >= 0.0))
    }

    /// Relabels agents as in [`Scene::permuted`](crate::model::Scene::permuted).
    pub fn permuted(&self, perm: &[usize]) -> AttentionTensor {
        let n = self.agents;
        let k = self.others();
        let mut data = vec![0.0; self.data.len()];
        for t in 0..self.steps {
            for a in 0..n {
                for b in (0..n).filter(|&b| b != a) {
                    data[(t * n + a) * k + column(a, b)] = self.weight(t, perm[a], perm[b]);
                }
            }
        }
        AttentionTensor {
            steps: self.steps,
            agents: n,
            data,
        }
    }
}

/// Column of agent `j` within the attention row of agent `i`.
pub fn column(i: usize, j: usize) -> usize {
    debug_assert_ne!(i, j);
    if j < i {
        j
    } else {
        j - 1
    }
}

/// Agent index of column `k` within the attention row of agent `i`.
pub fn other_agent(i: usize, k: usize) -> usize {
    if k < i {
        k
    } else {
        k + 1
    }
}
