use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{AgentState, Scene};
use crate::scenarios::{oracle_attention, Case};

fn tiny_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        hidden_dim: 6,
        attn_dim: 3,
        ..ModelConfig::default()
    }
}

/// Four agents in two lanes, the first two converging.
fn toy_sample(seed: u64, steps: usize, observed: usize) -> ScenarioSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speed: Vec<f64> = (0..4).map(|_| rng.gen_range(0.6..1.0)).collect();
    let frames = (0..steps)
        .map(|t| {
            let t = t as f64;
            (0..4)
                .map(|i| {
                    let lateral = if i < 2 { (3.0 - 0.1 * t).max(0.0) * (1.0 - 2.0 * i as f64) } else { 6.0 };
                    AgentState::new(lateral + i as f64, speed[i] * t + 4.0 * i as f64)
                })
                .collect()
        })
        .collect();
    let ids = (0..4).map(|i| i.to_string()).collect();
    let scene = Scene::new(format!("toy-{seed}"), ids, frames, observed).unwrap();
    ScenarioSample {
        correct_attention: Some(oracle_attention(steps, 4, 0, 1).unwrap()),
        case: Some(Case::Major),
        main_agents: Some([0, 1]),
        highlight: Some(2..6),
        scene,
    }
}

fn toy_dataset(train: usize, val: usize) -> Dataset {
    Dataset {
        train: (0..train as u64).map(|k| toy_sample(k, 8, 4)).collect(),
        val: (0..val as u64).map(|k| toy_sample(100 + k, 8, 4)).collect(),
        test: (0..2).map(|k| toy_sample(200 + k, 8, 4)).collect(),
        manifest: None,
    }
}

fn quick(variant: Variant, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        learning_rate: 1e-2,
        variant,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_gradient_leaves_params_and_decays_moments() {
    let mut p = vec![1.0, -2.0];
    let mut m = Moments {
        m: vec![0.5, -0.5],
        v: vec![0.25, 0.1],
        t: 3,
    };
    let cfg = AdamConfig::default();
    let mut q = p.clone();
    let mut zero = Moments::zeros(2);
    adam_step(&mut q, &[0.0, 0.0], &mut zero, 0.1, &cfg).unwrap();
    assert_eq!(q, p);
    adam_step(&mut p, &[0.0, 0.0], &mut m, 0.1, &cfg).unwrap();
    assert_eq!(m.m, vec![0.45, -0.45]);
    assert!((m.v[0] - 0.25 * 0.999).abs() < 1e-15);
    assert_eq!(m.t, 4);
}

#[test]
fn first_step_moves_by_about_the_learning_rate() {
    for g in [1e-4, 0.3, -7.0, 1e3] {
        let mut p = vec![0.0];
        adam_step(&mut p, &[g], &mut Moments::zeros(1), 0.01, &AdamConfig::default()).unwrap();
        assert!(p[0].abs() <= 0.01);
        assert!((p[0] + 0.01 * g.signum()).abs() < 1e-5);
    }
    assert!(adam_step(&mut [0.0], &[1.0, 2.0], &mut Moments::zeros(1), 0.1, &AdamConfig::default()).is_err());
}

#[test]
fn adam_matches_scalar_reimplementation_on_a_quadratic() {
    // f(x, y) = 3x² + 0.5y² + xy.
    let grad = |p: &[f64]| vec![6.0 * p[0] + p[1], p[1] + p[0]];
    let cfg = AdamConfig::default();
    let lr = 0.05;
    let mut p = vec![1.5, -2.0];
    let mut moments = Moments::zeros(2);
    let (mut x, mut y) = (1.5f64, -2.0f64);
    let (mut mx, mut my, mut vx, mut vy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut b1t, mut b2t) = (1.0f64, 1.0f64);
    for _ in 0..50 {
        let g = grad(&p);
        adam_step(&mut p, &g, &mut moments, lr, &cfg).unwrap();

        let (gx, gy) = (6.0 * x + y, y + x);
        b1t *= 0.9;
        b2t *= 0.999;
        mx = 0.9 * mx + 0.1 * gx;
        my = 0.9 * my + 0.1 * gy;
        vx = 0.999 * vx + 0.001 * gx * gx;
        vy = 0.999 * vy + 0.001 * gy * gy;
        x -= lr * (mx / (1.0 - b1t)) / ((vx / (1.0 - b2t)).sqrt() + 1e-8);
        y -= lr * (my / (1.0 - b1t)) / ((vy / (1.0 - b2t)).sqrt() + 1e-8);
        assert!((p[0] - x).abs() < 1e-10 && (p[1] - y).abs() < 1e-10);
    }
}

#[test]
fn one_scene_one_epoch_is_one_step() {
    let mut data = toy_dataset(1, 0);
    data.val.clear();
    let out = train(&data, &tiny_model(), &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
    assert_eq!(out.log.steps.len(), 1);
    assert_eq!(out.log.epochs.len(), 1);
    assert_eq!(out.best_epoch, 1);
    assert_eq!(out.params, out.last_params);
}

#[test]
fn steps_per_epoch_round_up() {
    let data = toy_dataset(5, 1);
    let out = train(&data, &tiny_model(), &quick(Variant::SAttn, 2)).unwrap();
    assert_eq!(out.log.steps.len(), 6);
    assert!(out.log.steps.windows(2).all(|w| w[0].step < w[1].step));
    assert_eq!(out.log.steps[3].epoch, 2);
}

struct Recorder {
    rows: usize,
    worst_sum: f64,
    min_weight: f64,
    non_uniform: usize,
}

impl TrainObserver for Recorder {
    fn on_attention(&mut self, _step: usize, _scene: &str, agents: usize, theta: &[f64]) {
        let k = agents - 1;
        for row in theta.chunks(k) {
            self.rows += 1;
            self.worst_sum = self.worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
            self.min_weight = self.min_weight.min(row.iter().copied().fold(f64::INFINITY, f64::min));
            if row.iter().any(|&w| w != 1.0 / k as f64) {
                self.non_uniform += 1;
            }
        }
    }
}

#[test]
fn average_variant_records_uniform_attention() {
    let data = toy_dataset(2, 1);
    let mut rec = Recorder {
        rows: 0,
        worst_sum: 0.0,
        min_weight: 1.0,
        non_uniform: 0,
    };
    let out = train_observed(&data, &tiny_model(), &quick(Variant::Average, 1), &mut rec).unwrap();
    // Teacher steps 0..8 plus rollout steps 4..8, four agents each, two scenes.
    assert_eq!(rec.rows, 2 * (8 + 4) * 4);
    assert_eq!(rec.non_uniform, 0);
    assert!(out.log.steps.iter().all(|r| r.loss.smooth_one_step == 0.0 && r.loss.smooth_seq == 0.0));
}

#[test]
fn learned_attention_rows_are_distributions() {
    let data = toy_dataset(2, 1);
    let mut rec = Recorder {
        rows: 0,
        worst_sum: 0.0,
        min_weight: 1.0,
        non_uniform: 0,
    };
    train_observed(&data, &tiny_model(), &quick(Variant::Ours, 2), &mut rec).unwrap();
    assert!(rec.rows > 0);
    assert!(rec.worst_sum < 1e-9);
    assert!(rec.min_weight >= 0.0);
    assert!(rec.non_uniform > 0);
}

#[test]
fn variant_loss_terms() {
    let data = toy_dataset(2, 1);
    let s_attn = train(&data, &tiny_model(), &quick(Variant::SAttn, 1)).unwrap();
    for r in &s_attn.log.steps {
        assert_eq!((r.loss.likelihood_seq, r.loss.var_seq, r.loss.smooth_seq), (0.0, 0.0, 0.0));
        let w = LossWeights { beta2: 0.0, ..LossWeights::default() };
        assert!((r.loss.compose(&w).total - r.loss.total).abs() < 1e-9);
    }
    let correct = train(&data, &tiny_model(), &quick(Variant::Correct, 1)).unwrap();
    for r in &correct.log.steps {
        assert_eq!((r.loss.smooth_one_step, r.loss.smooth_seq), (0.0, 0.0));
        assert!(r.loss.likelihood_seq != 0.0);
    }
    let non_smooth = train(&data, &tiny_model(), &quick(Variant::NonSmooth, 1)).unwrap();
    for r in &non_smooth.log.steps {
        let w = LossWeights { beta2: 0.0, ..LossWeights::default() };
        assert!((r.loss.compose(&w).total - r.loss.total).abs() < 1e-9);
    }
}

#[test]
fn correct_variant_requires_oracle_attention() {
    let mut data = toy_dataset(2, 1);
    data.train[1].correct_attention = None;
    let err = train(&data, &tiny_model(), &quick(Variant::Correct, 1)).unwrap_err();
    assert!(err.to_string().contains("oracle"), "{err}");
    assert!(train(&data, &tiny_model(), &quick(Variant::Ours, 1)).is_ok());
}

#[test]
fn overfitting_one_scene_halves_the_loss() {
    let data = Dataset {
        train: vec![toy_sample(9, 10, 5)],
        val: Vec::new(),
        test: Vec::new(),
        manifest: None,
    };
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 1e-2,
        rollout_sampling: RolloutSampling::Mean,
        ..TrainConfig::default()
    };
    let out = train(&data, &tiny_model(), &cfg).unwrap();
    let first = out.log.steps[0].loss.total;
    let last = out.log.steps[199].loss.total;
    assert!(last < first);
    assert!(last - first < -0.5 * first.abs(), "{first} -> {last}");
}

#[test]
fn fixed_seed_is_bit_reproducible() {
    let data = toy_dataset(3, 1);
    let cfg = quick(Variant::Ours, 2);
    let a = train(&data, &tiny_model(), &cfg).unwrap();
    let b = train(&data, &tiny_model(), &cfg).unwrap();
    assert_eq!(a.log.steps_csv(), b.log.steps_csv());
    assert_eq!(a.params, b.params);
    let c = train(&data, &tiny_model(), &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn non_finite_loss_aborts_with_the_step() {
    let mut data = toy_dataset(1, 0);
    let frames: Vec<Vec<AgentState>> = (0..6)
        .map(|t| vec![AgentState::new(0.0, 0.0), AgentState::new(if t % 2 == 0 { 1e300 } else { -1e300 }, 0.0)])
        .collect();
    let scene = Scene::new("huge", vec!["a".into(), "b".into()], frames, 3).unwrap();
    data.train = vec![ScenarioSample::unlabeled(scene)];
    match train(&data, &tiny_model(), &quick(Variant::SAttn, 1)) {
        Err(Error::NonFiniteLoss { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn best_validation_epoch_is_retained() {
    let data = toy_dataset(2, 2);
    let out = train(&data, &tiny_model(), &quick(Variant::Ours, 4)).unwrap();
    let best = out
        .log
        .epochs
        .iter()
        .min_by(|a, b| a.val_ade.unwrap().total_cmp(&b.val_ade.unwrap()))
        .unwrap();
    assert_eq!(out.best_epoch, best.epoch);
    let ade = mean_ade(&data.val, &out.params, &out.config, Variant::Ours).unwrap();
    assert_eq!(ade, best.val_ade.unwrap());
}

#[test]
fn config_validation_and_files() {
    assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    let d = TrainConfig::default();
    assert_eq!((d.learning_rate, d.tau, d.beta1, d.beta2, d.batch_size, d.epochs), (1e-3, 1e-3, 0.01, 0.01, 8, 200));

    let path = Path::new("cfg.toml");
    let file = ConfigFile::from_toml("[train]\nvariant = \"s_attn\"\nepochs = 3\n[model]\nhidden_dim = 7\n", path).unwrap();
    assert_eq!(file.train.variant, Variant::SAttn);
    assert_eq!(file.train.epochs, 3);
    assert_eq!(file.train.batch_size, 8);
    assert_eq!(file.model.hidden_dim, 7);
    assert_eq!(ConfigFile::from_toml(&file.to_toml().unwrap(), path).unwrap(), file);
    let err = ConfigFile::from_toml("[train]\nlearning_rat = 0.1\n", path).unwrap_err().to_string();
    assert!(err.contains("learning_rat"), "{err}");
    assert_eq!("non_smooth".parse::<Variant>().unwrap(), Variant::NonSmooth);
    assert!("smooth".parse::<Variant>().is_err());
}

#[test]
fn outcome_files_are_written() {
    let data = toy_dataset(2, 1);
    let mut out = train(&data, &tiny_model(), &quick(Variant::Ours, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.save(dir.path()).unwrap();
    assert_eq!(out.log.checkpoints.len(), 2);
    let best = Checkpoint::load(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(best.params, out.params);
    let log = std::fs::read_to_string(dir.path().join(STEPS_LOG)).unwrap();
    assert!(log.starts_with("epoch,step,likelihood_one_step"));
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn experiments_use_consecutive_seeds() {
    let data = toy_dataset(2, 1);
    let cfg = quick(Variant::SAttn, 1);
    let exp = run_experiment(&data, &tiny_model(), &cfg, 3).unwrap();
    assert_eq!(exp.report.seeds, vec![3, 4, 5]);
    assert_eq!(exp.runs.len(), 3);
    assert_ne!(exp.runs[0].outcome.params, exp.runs[1].outcome.params);
    let again = run_experiment(&data, &tiny_model(), &TrainConfig { seed: 4, ..cfg.clone() }, 1).unwrap();
    assert_eq!(again.runs[0].outcome.params, exp.runs[1].outcome.params);
    let raw = exp.report.raw("major", |m| Some(m.ade));
    let mean = raw.iter().sum::<f64>() / 3.0;
    let summary = &exp.report.summarize(None)[0];
    assert!((summary.ade.mean - mean).abs() < 1e-15);
    assert!(run_experiment(&data, &tiny_model(), &cfg, 0).is_err());
}
