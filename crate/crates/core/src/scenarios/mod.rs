//! Scripted driving scenarios with known ground-truth interactions.
//!
//! Roads run along +y; lanes are indexed left to right by their centre x.
//! Every scene has two main vehicles (agents 0 and 1) and background traffic
//! at constant speed on the outer lanes.

mod dataset;
mod double_merge;
mod halting_car;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionTensor, Scene};

pub use dataset::{build_dataset, Dataset, DatasetManifest, DatasetSpec, SampleInfo, Split};
pub use double_merge::gen_double_merge;
pub use halting_car::gen_halting_car;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    DoubleMerge,
    HaltingCar,
}

impl ScenarioKind {
    /// Cases in (default major, default minor) order.
    pub fn cases(self) -> [Case; 2] {
        match self {
            ScenarioKind::DoubleMerge => [Case::Major, Case::Minor],
            ScenarioKind::HaltingCar => [Case::Stop, Case::Go],
        }
    }

    pub fn generate(self, case: Case, seed: u64, params: &ScenarioParams) -> Result<ScenarioSample> {
        match self {
            ScenarioKind::DoubleMerge => gen_double_merge(case, seed, params),
            ScenarioKind::HaltingCar => gen_halting_car(case, seed, params),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::DoubleMerge => "double_merge",
            ScenarioKind::HaltingCar => "halting_car",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double_merge" => Ok(ScenarioKind::DoubleMerge),
            "halting_car" => Ok(ScenarioKind::HaltingCar),
            _ => Err(Error::invalid(format!(
                "unknown scenario {s:?} (expected double_merge or halting_car)"
            ))),
        }
    }
}

/// Case label of a sample.
///
/// Double Merge: `Major` has the green vehicle (agent 0) starting behind,
/// `Minor` has it ahead. Halting Car: the leader stops or keeps going.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Major,
    Minor,
    Stop,
    Go,
}

impl Case {
    pub fn as_str(self) -> &'static str {
        match self {
            Case::Major => "major",
            Case::Minor => "minor",
            Case::Stop => "stop",
            Case::Go => "go",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "major" => Ok(Case::Major),
            "minor" => Ok(Case::Minor),
            "stop" => Ok(Case::Stop),
            "go" => Ok(Case::Go),
            _ => Err(Error::invalid(format!("unknown case {s:?}"))),
        }
    }
}

/// Lane geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct LaneLayout {
    pub lane_width: f64,
    /// Lane centre x-coordinates, left to right.
    pub centers: Vec<f64>,
    pub road_length: f64,
}

impl LaneLayout {
    /// `lanes` lanes of equal width centred on x = 0.
    pub fn centered(lanes: usize, lane_width: f64, road_length: f64) -> Self {
        let half = (lanes as f64 - 1.0) / 2.0;
        LaneLayout {
            lane_width,
            centers: (0..lanes).map(|k| (k as f64 - half) * lane_width).collect(),
            road_length,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    MainA,
    MainB,
    Background,
}

/// Initial configuration of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleSpec {
    pub role: Role,
    pub lane: usize,
    /// Initial longitudinal position.
    pub y0: f64,
    pub speed: f64,
}

/// Simulation constants and randomization ranges.
///
/// Ranges are inclusive `[low, high]` and kept narrow so the two cases of a
/// scenario stay unambiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    /// Seconds per step.
    pub dt: f64,
    pub steps: usize,
    pub observed: usize,
    pub lane_width: f64,
    pub background_per_lane: usize,
    /// Main-vehicle cruise speed (m/s).
    pub speed: [f64; 2],
    pub background_speed: [f64; 2],
    /// Gap between consecutive background vehicles in a lane (m).
    pub background_spacing: [f64; 2],
    /// Longitudinal gap between the two merging vehicles (m).
    pub merge_gap: [f64; 2],
    /// Step at which the front vehicle starts its lane change.
    pub merge_start: [usize; 2],
    pub merge_duration: usize,
    /// Steps the rear vehicle waits after the front one completes.
    pub merge_wait: [usize; 2],
    /// Initial leader-follower gap (m).
    pub follow_gap: [f64; 2],
    /// Step at which the leader starts braking.
    pub brake_start: [usize; 2],
    /// Steps from cruise speed to standstill.
    pub brake_steps: usize,
    pub stop_steps: usize,
    /// Leader acceleration after the stop (m/s²).
    pub restart_accel: f64,
    /// Follower gap and relative-speed gains.
    pub follower_gains: [f64; 2],
    /// Follower acceleration limits (m/s²).
    pub follower_accel: [f64; 2],
    /// Minimum distance between any two vehicles (m).
    pub safety_radius: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            dt: 0.1,
            steps: 40,
            observed: 15,
            lane_width: 3.5,
            background_per_lane: 10,
            speed: [7.0, 9.0],
            background_speed: [6.0, 10.0],
            background_spacing: [8.0, 12.0],
            merge_gap: [6.0, 10.0],
            merge_start: [8, 12],
            merge_duration: 12,
            merge_wait: [1, 3],
            follow_gap: [10.0, 14.0],
            brake_start: [8, 12],
            brake_steps: 12,
            stop_steps: 3,
            restart_accel: 3.0,
            follower_gains: [2.0, 3.0],
            follower_accel: [-9.0, 3.0],
            safety_radius: 3.0,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.observed >= 2
            && self.observed < self.steps
            && self.lane_width > self.safety_radius
            && self.speed[0] <= self.speed[1]
            && self.background_speed[0] <= self.background_speed[1]
            && self.background_spacing[0] > self.safety_radius
            && self.background_spacing[0] <= self.background_spacing[1]
            && self.merge_gap[0] > self.safety_radius
            && self.merge_gap[0] <= self.merge_gap[1]
            && self.merge_start[0] <= self.merge_start[1]
            && self.merge_duration >= 1
            && self.merge_wait[0] <= self.merge_wait[1]
            && self.follow_gap[0] > self.safety_radius
            && self.follow_gap[0] <= self.follow_gap[1]
            && self.brake_start[0] <= self.brake_start[1]
            && self.brake_steps >= 1
            && self.restart_accel > 0.0
            && self.follower_accel[0] < 0.0
            && self.follower_accel[1] > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("inconsistent scenario parameters: {self:?}")))
        }
    }
}

/// One generated episode with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSample {
    pub scene: Scene,
    pub case: Option<Case>,
    /// `[rear, front]` main vehicles, when the scene has them.
    pub main_agents: Option<[usize; 2]>,
    /// Oracle attention: main vehicles fully on each other, others uniform.
    pub correct_attention: Option<AttentionTensor>,
    /// Steps during which the rear vehicle must watch the front one.
    pub highlight: Option<Range<usize>>,
}

impl ScenarioSample {
    /// A scene without labels (e.g. recorded data).
    pub fn unlabeled(scene: Scene) -> Self {
        ScenarioSample {
            scene,
            case: None,
            main_agents: None,
            correct_attention: None,
            highlight: None,
        }
    }
}

/// Time-constant attention where agents `a` and `b` attend only to each other
/// and every other agent is uniform over the rest.
pub fn oracle_attention(steps: usize, agents: usize, a: usize, b: usize) -> Result<AttentionTensor> {
    if a == b || a >= agents || b >= agents {
        return Err(Error::invalid(format!(
            "main agents {a} and {b} must be distinct agents of {agents}"
        )));
    }
    let k = agents - 1;
    let mut step = vec![1.0 / k as f64; agents * k];
    for (me, other) in [(a, b), (b, a)] {
        let row = &mut step[me * k..(me + 1) * k];
        row.fill(0.0);
        row[crate::model::column(me, other)] = 1.0;
    }
    AttentionTensor::new(steps, agents, step.repeat(steps))
}

pub(crate) fn uniform_in(rng: &mut impl rand::Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..=range[1])
    }
}

pub(crate) fn int_in(rng: &mut impl rand::Rng, range: [usize; 2]) -> usize {
    rng.gen_range(range[0]..=range[1])
}

/// Background traffic: `per_lane` vehicles per listed lane, one speed per
/// lane, positions computed in closed form so velocities are exactly
/// constant. Returns `positions[t][k]`.
pub(crate) fn background_traffic(
    rng: &mut impl rand::Rng,
    params: &ScenarioParams,
    layout: &LaneLayout,
    lanes: &[usize],
) -> (Vec<VehicleSpec>, Vec<Vec<(f64, f64)>>) {
    let mut specs = Vec::new();
    for &lane in lanes {
        let speed = uniform_in(rng, params.background_speed);
        let mut y = -uniform_in(rng, [20.0, 30.0]);
        for _ in 0..params.background_per_lane {
            specs.push(VehicleSpec {
                role: Role::Background,
                lane,
                y0: y,
                speed,
            });
            y += uniform_in(rng, params.background_spacing);
        }
    }
    let frames = (0..params.steps)
        .map(|t| {
            let time = t as f64 * params.dt;
            specs
                .iter()
                .map(|v| (layout.centers[v.lane], v.y0 + v.speed * time))
                .collect()
        })
        .collect();
    (specs, frames)
}

/// Smooth 0→1 ramp with zero slope at both ends.
pub(crate) fn cubic_ease(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

#[cfg(test)]
mod tests;
