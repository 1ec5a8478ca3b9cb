use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    background_traffic, int_in, oracle_attention, uniform_in, Case, LaneLayout, ScenarioParams,
    ScenarioSample,
};
use crate::error::{Error, Result};
use crate::model::{AgentState, Scene};

const FOLLOWER: usize = 0;
const LEADER: usize = 1;

/// Leader speed at every step: cruise, or brake to a stop, wait, and
/// accelerate back towards cruise speed.
fn leader_speeds(params: &ScenarioParams, cruise: f64, brake_start: Option<usize>) -> Vec<f64> {
    (0..params.steps)
        .map(|t| {
            let Some(b) = brake_start else { return cruise };
            let stopped = b + params.brake_steps;
            let restart = stopped + params.stop_steps;
            if t <= b {
                cruise
            } else if t <= stopped {
                cruise * (stopped - t) as f64 / params.brake_steps as f64
            } else if t <= restart {
                0.0
            } else {
                (params.restart_accel * (t - restart) as f64 * params.dt).min(cruise)
            }
        })
        .collect()
}

/// Leader and follower share the centre lane; the follower tracks its
/// initial gap with a gap/relative-speed controller.
///
/// Agent 0 is the follower, agent 1 the leader, agents 2.. are background
/// traffic on the outer lanes.
pub fn gen_halting_car(case: Case, seed: u64, params: &ScenarioParams) -> Result<ScenarioSample> {
    params.validate()?;
    let stops = match case {
        Case::Stop => true,
        Case::Go => false,
        other => {
            return Err(Error::invalid(format!("halting car has no {other} case")));
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = LaneLayout::centered(3, params.lane_width, 200.0);
    let cruise = uniform_in(&mut rng, params.speed);
    let gap0 = uniform_in(&mut rng, params.follow_gap);
    let brake = int_in(&mut rng, params.brake_start);
    let brake_start = stops.then_some(brake);
    let (bg_specs, bg) = background_traffic(&mut rng, params, &layout, &[0, 2]);

    let lead_v = leader_speeds(params, cruise, brake_start);
    let [kp, kd] = params.follower_gains;
    let [a_min, a_max] = params.follower_accel;
    let (mut lead_y, mut follow_y, mut follow_v) = (gap0, 0.0, cruise);
    let x = layout.centers[1];
    let mut frames = Vec::with_capacity(params.steps);
    for t in 0..params.steps {
        if t > 0 {
            // Semi-implicit Euler: speed first, then position.
            let gap = lead_y - follow_y;
            let accel = (kp * (gap - gap0) + kd * (lead_v[t - 1] - follow_v)).clamp(a_min, a_max);
            follow_v = (follow_v + accel * params.dt).max(0.0);
            follow_y += follow_v * params.dt;
            lead_y += lead_v[t] * params.dt;
        }
        let mut frame = vec![AgentState::default(); 2];
        frame[FOLLOWER] = AgentState::new(x, follow_y);
        frame[LEADER] = AgentState::new(x, lead_y);
        frame.extend(bg[t].iter().map(|&(x, y)| AgentState::new(x, y)));
        frames.push(frame);
    }

    let mut ids = vec!["follower".to_string(), "leader".to_string()];
    ids.extend((0..bg_specs.len()).map(|k| format!("bg{k:02}")));
    let n = ids.len();
    let scene = Scene::new(format!("halting_car-{case}-{seed}"), ids, frames, params.observed)?
        .centered();
    let highlight = brake_start.map(|b| b..(b + params.brake_steps + params.stop_steps).min(params.steps));
    Ok(ScenarioSample {
        correct_attention: Some(oracle_attention(params.steps, n, FOLLOWER, LEADER)?),
        scene,
        case: Some(case),
        main_agents: Some([FOLLOWER, LEADER]),
        highlight,
    })
}
