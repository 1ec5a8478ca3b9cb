use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::Network;
use super::*;
use crate::autodiff::Array;
use crate::error::Error;

fn small_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        hidden_dim: 5,
        attn_dim: 3,
        ..ModelConfig::default()
    }
}

fn random_scene(steps: usize, agents: usize, observed: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<AgentState> = (0..agents)
        .map(|_| AgentState::new(rng.gen_range(-10.0..10.0), rng.gen_range(-5.0..5.0)))
        .collect();
    let vel: Vec<(f64, f64)> = (0..agents)
        .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(-0.2..0.2)))
        .collect();
    let frames = (0..steps)
        .map(|t| {
            start
                .iter()
                .zip(&vel)
                .map(|(s, v)| AgentState::new(s.x + v.0 * t as f64, s.y + v.1 * t as f64))
                .collect()
        })
        .collect();
    let ids = (0..agents).map(|i| format!("a{i}")).collect();
    Scene::new("r", ids, frames, observed).unwrap()
}

#[test]
fn output_shapes_follow_scene() {
    let config = small_config();
    let params = ModelParams::init(&config, 1);
    let scene = random_scene(10, 3, 4, 2);
    let out = forward_teacher_forced(&scene, &params, &config).unwrap();
    assert_eq!(out.gaussians.len(), 10);
    assert!(out.gaussians.iter().all(|g| g.len() == 3));
    assert_eq!((out.attention.steps(), out.attention.agents()), (10, 3));
    let (err, nonneg) = out.attention.normalization_error();
    assert!(err < 1e-12 && nonneg);
}

#[test]
fn zero_weights_emit_head_bias() {
    let config = ModelConfig {
        mean_anchor: MeanAnchor::Absolute,
        ..small_config()
    };
    let mut params = ModelParams::zeros(&config);
    params.pred.bias = Array::vector(vec![0.5, -1.5, 0.1, 0.2, 0.3]);
    let scene = random_scene(6, 3, 2, 3);
    let out = forward_teacher_forced(&scene, &params, &config).unwrap();
    for g in out.gaussians.iter().flatten() {
        assert_eq!(g.mean, [0.5, -1.5]);
        assert_eq!(g.log_sigma, [0.1, 0.2]);
        assert_eq!(g.corr_pre, 0.3);
    }
}

#[test]
fn two_agents_attend_fully_to_each_other() {
    let config = small_config();
    let params = ModelParams::init(&config, 4);
    let scene = random_scene(5, 2, 2, 5);
    let out = forward_teacher_forced(&scene, &params, &config).unwrap();
    assert!(out.attention.data().iter().all(|&w| w == 1.0));
}

#[test]
fn permuting_agents_permutes_outputs_exactly() {
    let config = small_config();
    let params = ModelParams::init(&config, 6);
    let scene = random_scene(7, 5, 3, 7);
    let perm = [3, 0, 4, 1, 2];
    let base = forward_teacher_forced(&scene, &params, &config).unwrap();
    let moved = forward_teacher_forced(&scene.permuted(&perm).unwrap(), &params, &config).unwrap();
    for t in 0..scene.steps() {
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(moved.gaussians[t][k], base.gaussians[t][p]);
        }
    }
    assert_eq!(moved.attention, base.attention.permuted(&perm));
}

#[test]
fn mean_rollout_with_one_future_step_matches_teacher_forcing() {
    let config = ModelConfig {
        rollout_sampling: RolloutSampling::Mean,
        ..small_config()
    };
    let params = ModelParams::init(&config, 8);
    let scene = random_scene(8, 3, 7, 9);
    let tf = forward_teacher_forced(&scene, &params, &config).unwrap();
    let ro = rollout(&scene, &params, &config, 0).unwrap();
    for t in 0..7 {
        assert_eq!(tf.gaussians[t], ro.gaussians[t]);
    }
    let fed = ro.inputs[7][1];
    assert_eq!([fed.x, fed.y], tf.gaussians[6][1].mean);
}

#[test]
fn rollout_is_seeded() {
    let config = small_config();
    let params = ModelParams::init(&config, 10);
    let scene = random_scene(8, 3, 3, 11);
    let a = rollout(&scene, &params, &config, 5).unwrap();
    let b = rollout(&scene, &params, &config, 5).unwrap();
    let c = rollout(&scene, &params, &config, 6).unwrap();
    assert_eq!(a.inputs, b.inputs);
    assert_ne!(a.inputs, c.inputs);
    // The observed prefix is ground truth.
    assert_eq!(a.inputs[2], scene.frame(2));
}

#[test]
fn reparameterized_draws_match_predicted_covariance() {
    let config = small_config();
    let mut params = ModelParams::zeros(&config);
    params.pred.bias = Array::vector(vec![0.0, 0.0, 2f64.ln(), 0.0, 0.6f64.atanh()]);
    let scene = random_scene(3, 2, 2, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let draws = 100_000;
    let mut mean = [0.0; 2];
    let (mut sxx, mut syy, mut sxy, mut mx, mut my) = (0.0, 0.0, 0.0, 0.0, 0.0);
    // A fresh tape per chunk keeps memory bounded.
    for _ in 0..draws / 1000 {
        let mut net = Network::new(&params, &config, 2, false).unwrap();
        let state = net.initial_state();
        let prev = net.frame(&scene, 0);
        let curr = net.frame(&scene, 1);
        let (_, out) = net.step(prev, curr, state, None).unwrap();
        mean.copy_from_slice(&net.tape.value(out.mean).data()[..2]);
        for _ in 0..1000 {
            let eps = super::network::standard_normals(&mut rng, 4);
            let s = net.sample(&out, Some(eps), 2).unwrap();
            let v = net.tape.value(s).data();
            let (dx, dy) = (v[0] - mean[0], v[1] - mean[1]);
            mx += dx;
            my += dy;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    }
    let n = draws as f64;
    // Σ = [[4, 1.2], [1.2, 1]].
    assert!((mx / n).abs() < 3.0 * 2.0 / n.sqrt());
    assert!((my / n).abs() < 3.0 * 1.0 / n.sqrt());
    assert!((sxx / n - 4.0).abs() < 0.05 * 4.0);
    assert!((syy / n - 1.0).abs() < 0.05);
    assert!((sxy / n - 1.2).abs() < 0.05 * 1.2);
}

#[test]
fn degenerate_covariance_is_reported() {
    let config = small_config();
    let mut params = ModelParams::zeros(&config);
    params.pred.bias = Array::vector(vec![0.0, 0.0, -800.0, 0.0, 0.0]);
    let scene = random_scene(6, 2, 3, 14);
    match rollout(&scene, &params, &config, 1) {
        Err(Error::NotPositiveDefinite { step: 3, agent: 0 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn prediction_is_translation_equivariant() {
    let config = small_config();
    let params = ModelParams::init(&config, 15);
    let scene = random_scene(9, 3, 5, 16);
    let a = predict(&scene, 4, &params, &config, AttentionMode::Learned).unwrap();
    let b = predict(&scene.translated(100.0, -40.0), 4, &params, &config, AttentionMode::Learned).unwrap();
    assert_eq!(a.positions.len(), 4);
    assert_eq!(a.attention.steps(), 8);
    for (pa, pb) in a.positions.iter().flatten().zip(b.positions.iter().flatten()) {
        assert!((pa.x + 100.0 - pb.x).abs() < 1e-9 && (pa.y - 40.0 - pb.y).abs() < 1e-9);
    }
    assert!(predict(&scene, 0, &params, &config, AttentionMode::Learned).is_err());
    let short = scene.with_observed(1).unwrap();
    assert!(predict(&short, 2, &params, &config, AttentionMode::Learned).is_err());
}

#[test]
fn forced_attention_is_used_verbatim() {
    let config = small_config();
    let params = ModelParams::init(&config, 17);
    let scene = random_scene(4, 3, 2, 18);
    let uniform = forward_teacher_forced_with(&scene, &params, &config, AttentionMode::Uniform).unwrap();
    assert!(uniform.attention.data().iter().all(|&w| w == 0.5));
    let fixed = AttentionTensor::new(1, 3, vec![1.0, 0.0, 0.25, 0.75, 0.0, 1.0]).unwrap();
    let out = forward_teacher_forced_with(&scene, &params, &config, AttentionMode::Fixed(&fixed)).unwrap();
    for t in 0..4 {
        assert_eq!(out.attention.step(t), fixed.step(0));
    }
    let wrong = AttentionTensor::uniform(1, 4).unwrap();
    assert!(forward_teacher_forced_with(&scene, &params, &config, AttentionMode::Fixed(&wrong)).is_err());
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn zero_weights_give_zero_features_and_outputs() {
    let config = small_config();
    let params = ModelParams::zeros(&config);
    let a = AgentState::new(1.0, 2.0);
    let b = AgentState::new(-3.0, 0.5);
    assert!(embed_interaction(a, b, &params, &config).unwrap().iter().all(|&v| v == 0.0));
    assert!(embed_self(a, a, &params, &config).unwrap().iter().all(|&v| v == 0.0));
    let h = config.hidden_dim;
    let out = step_recurrent(Cell::Interaction, &vec![0.0; h], &vec![0.0; h], &vec![0.0; config.embed_dim], &params, &config)
        .unwrap();
    assert!(out.output.iter().all(|&v| v == 0.0));
}

#[test]
fn interaction_embedding_depends_on_order() {
    let config = small_config();
    let params = ModelParams::init(&config, 20);
    let a = AgentState::new(1.0, 2.0);
    let b = AgentState::new(-3.0, 0.5);
    assert_ne!(
        embed_interaction(a, b, &params, &config).unwrap(),
        embed_interaction(b, a, &params, &config).unwrap()
    );
}

#[test]
fn saturated_gates_preserve_cell_state() {
    let config = small_config();
    let h = config.hidden_dim;
    let mut params = ModelParams::zeros(&config);
    let bias = params.g_self.bias.data_mut();
    bias[..h].fill(-50.0);
    bias[h..2 * h].fill(50.0);
    let c_prev: Vec<f64> = (0..h).map(|u| u as f64 * 0.3 - 0.5).collect();
    let out = step_recurrent(Cell::SelfLoop, &vec![0.2; h], &c_prev, &vec![0.7; config.embed_dim], &params, &config)
        .unwrap();
    for (c, p) in out.cell.iter().zip(&c_prev) {
        assert!((c - p).abs() < 1e-12);
    }
}

#[test]
fn recurrent_cell_matches_scalar_reimplementation() {
    let config = small_config();
    let params = ModelParams::init(&config, 21);
    let (e, h) = (config.embed_dim, config.hidden_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x: Vec<f64> = (0..e).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h0: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c0: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let out = step_recurrent(Cell::Interaction, &h0, &c0, &x, &params, &config).unwrap();
    let w = &params.g_interact.weight;
    let b = params.g_interact.bias.data();
    let input: Vec<f64> = x.iter().chain(&h0).copied().collect();
    let pre = |col: usize| b[col] + input.iter().enumerate().map(|(r, v)| v * w.get2(r, col)).sum::<f64>();
    for u in 0..h {
        let i = sigmoid(pre(u));
        let f = sigmoid(pre(h + u));
        let g = pre(2 * h + u).tanh();
        let o = sigmoid(pre(3 * h + u));
        let c = f * c0[u] + i * g;
        assert!((out.cell[u] - c).abs() < 1e-12);
        assert!((out.hidden[u] - o * c.tanh()).abs() < 1e-12);
    }
}

#[test]
fn attention_rows() {
    let config = ModelConfig {
        embed_dim: 3,
        hidden_dim: 4,
        attn_dim: 4,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&config, 23);
    assert_eq!(compute_attention(&[0.3; 4], &[vec![0.1; 4]], &params, &config).unwrap(), vec![1.0]);
    assert!(compute_attention(&[0.3; 4], &[], &params, &config).is_err());

    // Identity attention map: orthogonal supports give zero logits.
    let mut identity = params.clone();
    identity.attn.weight = Array::from_rows(&[
        &[1.0, 0.0, 0.0, 0.0],
        &[0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 1.0, 0.0],
        &[0.0, 0.0, 0.0, 1.0],
    ])
    .unwrap();
    identity.attn.bias = Array::zeros(&[4]);
    let edges = vec![vec![0.0, 0.0, 0.5, 0.0], vec![0.0, 0.0, 0.0, -0.9], vec![0.0, 0.0, 0.2, 0.2]];
    let theta = compute_attention(&[0.4, -0.8, 0.0, 0.0], &edges, &identity, &config).unwrap();
    assert!(theta.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));

    // Brute-force logits and softmax.
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let own: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let edges: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let key = |v: &[f64]| -> Vec<f64> {
        (0..4)
            .map(|c| (params.attn.bias.data()[c] + (0..4).map(|r| v[r] * params.attn.weight.get2(r, c)).sum::<f64>()).tanh())
            .collect()
    };
    let q = key(&own);
    let logits: Vec<f64> = edges.iter().map(|e| key(e).iter().zip(&q).map(|(a, b)| a * b).sum()).collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let theta = compute_attention(&own, &edges, &params, &config).unwrap();
    for (t, l) in theta.iter().zip(&logits) {
        assert!((t - l.exp() / z).abs() < 1e-12);
    }
}

#[test]
fn prediction_step_with_zero_weights_emits_bias() {
    let config = ModelConfig {
        mean_anchor: MeanAnchor::Position,
        ..small_config()
    };
    let mut params = ModelParams::zeros(&config);
    params.pred.bias = Array::vector(vec![0.5, -0.25, 0.1, 0.2, 0.3]);
    let h = config.hidden_dim;
    let (out, g) = step_prediction(
        &vec![0.0; h],
        &vec![0.0; h],
        AgentState::new(0.0, 0.0),
        AgentState::new(2.0, 3.0),
        &vec![0.4; h],
        &vec![0.1; h],
        &params,
        &config,
    )
    .unwrap();
    assert!(out.output.iter().all(|&v| v == 0.0));
    assert_eq!(g.mean, [2.5, 2.75]);
    assert_eq!(g.log_sigma, [0.1, 0.2]);
}

#[test]
fn weighted_edge_sums() {
    use crate::autodiff::Tape;
    let mut tape = Tape::new();
    let values = Array::from_rows(&[&[1.0, 2.0], &[3.0, -4.0], &[0.5, 0.25]]).unwrap();
    let v = tape.constant(values);
    let one_hot = tape.constant(Array::from_rows(&[&[1.0, 0.0, 0.0]]).unwrap());
    let a = tape.attend(one_hot, v).unwrap();
    assert_eq!(tape.value(a).data(), &[1.0, 2.0]);
    let uniform = tape.constant(Array::from_rows(&[&[1.0 / 3.0; 3]]).unwrap());
    let m = tape.attend(uniform, v).unwrap();
    assert!((tape.value(m).data()[0] - 1.5).abs() < 1e-15);
    assert!((tape.value(m).data()[1] - (-1.75 / 3.0)).abs() < 1e-15);
}
