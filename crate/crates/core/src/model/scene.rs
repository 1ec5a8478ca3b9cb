use serde::{Deserialize, Serialize};

use crate::autodiff::order_free_sum;
use crate::error::{Error, Result};

/// Planar position of one agent at one time step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
}

impl AgentState {
    pub const fn new(x: f64, y: f64) -> Self {
        AgentState { x, y }
    }

    pub fn distance(&self, other: &AgentState) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A fixed-cast multi-agent episode: `steps × agents` states, the first
/// `observed` of which are history. `observed == steps` marks a scene that is
/// all history (nothing to score).
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    id: String,
    agent_ids: Vec<String>,
    states: Vec<AgentState>,
    steps: usize,
    observed: usize,
}

impl Scene {
    /// `frames[t][i]` is the state of agent `i` at step `t`.
    pub fn new(
        id: impl Into<String>,
        agent_ids: Vec<String>,
        frames: Vec<Vec<AgentState>>,
        observed: usize,
    ) -> Result<Self> {
        let id = id.into();
        let n = agent_ids.len();
        if n < 2 {
            return Err(Error::InvalidScene(format!(
                "scene {id}: needs at least 2 agents, got {n}"
            )));
        }
        let steps = frames.len();
        if observed < 1 || observed > steps {
            return Err(Error::InvalidScene(format!(
                "scene {id}: observed steps {observed} must lie in [1, {steps}]"
            )));
        }
        let mut states = Vec::with_capacity(steps * n);
        for (t, frame) in frames.into_iter().enumerate() {
            if frame.len() != n {
                return Err(Error::InvalidScene(format!(
                    "scene {id}: step {t} has {} agents, expected {n}",
                    frame.len()
                )));
            }
            if let Some(bad) = frame.iter().position(|s| !s.x.is_finite() || !s.y.is_finite()) {
                return Err(Error::InvalidScene(format!(
                    "scene {id}: non-finite state for agent {bad} at step {t}"
                )));
            }
            states.extend(frame);
        }
        Ok(Scene {
            id,
            agent_ids,
            states,
            steps,
            observed,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn agent_ids(&self) -> &[String] {
        &self.agent_ids
    }

    /// Total number of steps (the last predicted step).
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn agents(&self) -> usize {
        self.agent_ids.len()
    }

    /// Number of observed (history) steps.
    pub fn observed(&self) -> usize {
        self.observed
    }

    pub fn horizon(&self) -> usize {
        self.steps - self.observed
    }

    pub fn frame(&self, t: usize) -> &[AgentState] {
        let n = self.agents();
        &self.states[t * n..(t + 1) * n]
    }

    pub fn state(&self, t: usize, agent: usize) -> AgentState {
        self.states[t * self.agents() + agent]
    }

    /// Positions of one step as an `N × 2` row-major buffer.
    pub fn frame_xy(&self, t: usize) -> Vec<f64> {
        self.frame(t).iter().flat_map(|s| [s.x, s.y]).collect()
    }

    /// Same states with a different observed/predicted split.
    pub fn with_observed(&self, observed: usize) -> Result<Scene> {
        if observed < 1 || observed > self.steps {
            return Err(Error::InvalidScene(format!(
                "scene {}: observed steps {observed} must lie in [1, {}]",
                self.id, self.steps
            )));
        }
        Ok(Scene {
            observed,
            ..self.clone()
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Scene {
        self.id = id.into();
        self
    }

    /// Steps `start..start + len` as a standalone scene.
    pub fn window(&self, start: usize, len: usize, observed: usize) -> Result<Scene> {
        if start + len > self.steps {
            return Err(Error::invalid(format!(
                "window {start}+{len} exceeds scene length {}",
                self.steps
            )));
        }
        let frames = (start..start + len).map(|t| self.frame(t).to_vec()).collect();
        Scene::new(
            format!("{}@{start}", self.id),
            self.agent_ids.clone(),
            frames,
            observed,
        )
    }

    /// Centroid of all agents at the first step, summed independently of
    /// agent order.
    pub fn first_centroid(&self) -> AgentState {
        let frame = self.frame(0);
        let n = frame.len() as f64;
        let mut xs: Vec<f64> = frame.iter().map(|s| s.x).collect();
        let mut ys: Vec<f64> = frame.iter().map(|s| s.y).collect();
        AgentState::new(order_free_sum(&mut xs) / n, order_free_sum(&mut ys) / n)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Scene {
        let states = self
            .states
            .iter()
            .map(|s| AgentState::new(s.x + dx, s.y + dy))
            .collect();
        Scene {
            states,
            ..self.clone()
        }
    }

    /// Translation placing the first-step centroid at the origin.
    pub fn centered(&self) -> Scene {
        let c = self.first_centroid();
        self.translated(-c.x, -c.y)
    }

    /// Relabels agents: agent `k` of the result is agent `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Scene> {
        let n = self.agents();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        let agent_ids = perm.iter().map(|&p| self.agent_ids[p].clone()).collect();
        let frames = (0..self.steps)
            .map(|t| perm.iter().map(|&p| self.state(t, p)).collect())
            .collect();
        Scene::new(self.id.clone(), agent_ids, frames, self.observed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    fn line_scene(steps: usize, n: usize) -> Scene {
        let frames = (0..steps)
            .map(|t| (0..n).map(|i| AgentState::new(t as f64, i as f64)).collect())
            .collect();
        Scene::new("s", ids(n), frames, 1).unwrap()
    }

    #[test]
    fn enforces_invariants() {
        let frames = vec![vec![AgentState::default(); 1]; 3];
        assert!(Scene::new("a", ids(1), frames, 1).is_err());
        let frames = vec![vec![AgentState::default(); 2]; 3];
        assert!(Scene::new("a", ids(2), frames.clone(), 0).is_err());
        assert!(Scene::new("a", ids(2), frames.clone(), 4).is_err());
        assert!(Scene::new("a", ids(2), frames.clone(), 3).is_ok());
        assert!(Scene::new("a", ids(2), frames, 2).is_ok());
        let frames = vec![vec![AgentState::new(f64::NAN, 0.0); 2]; 3];
        assert!(Scene::new("a", ids(2), frames, 1).is_err());
    }

    #[test]
    fn centering_moves_first_centroid_to_origin() {
        let s = line_scene(4, 3).translated(10.0, -3.0).centered();
        let c = s.first_centroid();
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12);
    }

    #[test]
    fn permutation_relabels() {
        let s = line_scene(3, 3);
        let p = s.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.state(1, 0), s.state(1, 2));
        assert_eq!(p.agent_ids()[0], "2");
        assert!(s.permuted(&[0, 0, 1]).is_err());
    }
}
