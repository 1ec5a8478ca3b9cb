use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    background_traffic, cubic_ease, int_in, oracle_attention, uniform_in, Case, LaneLayout,
    ScenarioParams, ScenarioSample,
};
use crate::error::{Error, Result};
use crate::model::{AgentState, Scene};

const GREEN: usize = 0;
const BROWN: usize = 1;

/// Two main vehicles on the inner lanes swap lanes; the rear one waits until
/// the front one has finished its lane change.
///
/// Agent 0 is the green vehicle (starts in the left inner lane), agent 1 the
/// brown one (right inner lane), agents 2.. are background traffic on the
/// outer lanes.
pub fn gen_double_merge(case: Case, seed: u64, params: &ScenarioParams) -> Result<ScenarioSample> {
    params.validate()?;
    let green_ahead = match case {
        Case::Major => false,
        Case::Minor => true,
        other => {
            return Err(Error::invalid(format!("double merge has no {other} case")));
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = LaneLayout::centered(4, params.lane_width, 200.0);
    let speed = uniform_in(&mut rng, params.speed);
    let gap = uniform_in(&mut rng, params.merge_gap);
    let front_start = int_in(&mut rng, params.merge_start);
    let rear_start = front_start + params.merge_duration + int_in(&mut rng, params.merge_wait);
    let (bg_specs, bg) = background_traffic(&mut rng, params, &layout, &[0, 3]);

    let (front, rear) = if green_ahead { (GREEN, BROWN) } else { (BROWN, GREEN) };
    let lane_x = |agent: usize| if agent == GREEN { layout.centers[1] } else { layout.centers[2] };
    let lateral = |agent: usize, t: usize| {
        let start = if agent == front { front_start } else { rear_start };
        let u = (t as f64 - start as f64) / params.merge_duration as f64;
        let (from, to) = (lane_x(agent), lane_x(1 - agent));
        from + (to - from) * cubic_ease(u)
    };
    let frames: Vec<Vec<AgentState>> = (0..params.steps)
        .map(|t| {
            let y = speed * t as f64 * params.dt;
            let mut frame = vec![AgentState::default(); 2];
            frame[front] = AgentState::new(lateral(front, t), gap + y);
            frame[rear] = AgentState::new(lateral(rear, t), y);
            frame.extend(bg[t].iter().map(|&(x, y)| AgentState::new(x, y)));
            frame
        })
        .collect();

    let mut ids = vec!["green".to_string(), "brown".to_string()];
    ids.extend((0..bg_specs.len()).map(|k| format!("bg{k:02}")));
    let n = ids.len();
    let scene = Scene::new(format!("double_merge-{case}-{seed}"), ids, frames, params.observed)?
        .centered();
    Ok(ScenarioSample {
        correct_attention: Some(oracle_attention(params.steps, n, GREEN, BROWN)?),
        scene,
        case: Some(case),
        main_agents: Some([rear, front]),
        highlight: Some(front_start..rear_start.min(params.steps)),
    })
}
