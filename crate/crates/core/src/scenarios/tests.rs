use proptest::prelude::*;

use super::*;
use crate::losses::smoothness_loss;

fn speeds(sample: &ScenarioSample, agent: usize) -> Vec<f64> {
    let s = &sample.scene;
    (1..s.steps())
        .map(|t| s.state(t, agent).distance(&s.state(t - 1, agent)) / 0.1)
        .collect()
}

fn min_pairwise_distance(scene: &Scene) -> f64 {
    let mut best = f64::INFINITY;
    for t in 0..scene.steps() {
        let f = scene.frame(t);
        for i in 0..f.len() {
            for j in i + 1..f.len() {
                best = best.min(f[i].distance(&f[j]));
            }
        }
    }
    best
}

#[test]
fn double_merge_has_twenty_two_agents_and_case_geometry() {
    let p = ScenarioParams::default();
    let minor = gen_double_merge(Case::Minor, 3, &p).unwrap();
    assert_eq!(minor.scene.agents(), 22);
    assert_eq!(minor.scene.steps(), 40);
    assert_eq!(minor.scene.observed(), 15);
    // Minor: green (agent 0) is ahead at the first step.
    assert!(minor.scene.state(0, 0).y > minor.scene.state(0, 1).y);
    assert_eq!(minor.main_agents, Some([1, 0]));
    let major = gen_double_merge(Case::Major, 3, &p).unwrap();
    assert!(major.scene.state(0, 0).y < major.scene.state(0, 1).y);
    assert!(gen_double_merge(Case::Stop, 3, &p).is_err());
}

#[test]
fn main_vehicles_stay_between_inner_lanes_and_front_finishes() {
    let p = ScenarioParams::default();
    for case in [Case::Major, Case::Minor] {
        let sample = gen_double_merge(case, 11, &p).unwrap();
        let s = &sample.scene;
        let (g0, b0) = (s.state(0, 0).x, s.state(0, 1).x);
        assert!((b0 - g0 - p.lane_width).abs() < 1e-9);
        for t in 0..s.steps() {
            for agent in 0..2 {
                let x = s.state(t, agent).x;
                assert!(x >= g0 - 1e-9 && x <= b0 + 1e-9);
            }
        }
        let [rear, front] = sample.main_agents.unwrap();
        let last = s.steps() - 1;
        assert!((s.state(last, front).x - s.state(0, rear).x).abs() < 1e-9);
    }
}

#[test]
fn rear_vehicle_waits_for_front_lane_change() {
    let p = ScenarioParams::default();
    for seed in 0..30 {
        for case in [Case::Major, Case::Minor] {
            let sample = gen_double_merge(case, seed, &p).unwrap();
            let [rear, front] = sample.main_agents.unwrap();
            let s = &sample.scene;
            let moving = |agent: usize, t: usize| (s.state(t, agent).x - s.state(0, agent).x).abs() > 1e-9;
            let front_done = (0..s.steps())
                .find(|&t| (s.state(t, front).x - s.state(0, rear).x).abs() < 1e-9)
                .expect("front vehicle completes its lane change");
            let rear_start = (0..s.steps()).find(|&t| moving(rear, t));
            if let Some(r) = rear_start {
                assert!(r > front_done, "seed {seed}: rear moves at {r}, front done at {front_done}");
            }
            let h = sample.highlight.clone().unwrap();
            assert!(h.start < h.end && moving(front, h.start + 1));
        }
    }
}

#[test]
fn halting_car_cases() {
    let p = ScenarioParams::default();
    let go = gen_halting_car(Case::Go, 5, &p).unwrap();
    let v = speeds(&go, 1);
    assert!(v.iter().all(|s| (s - v[0]).abs() < 1e-9));
    assert!(go.highlight.is_none());
    let stop = gen_halting_car(Case::Stop, 5, &p).unwrap();
    let v = speeds(&stop, 1);
    let zero = v.iter().position(|&s| s < 1e-9).expect("leader stops");
    assert!(v[zero..].iter().any(|&s| s > 0.5), "leader restarts");
    assert_eq!(stop.scene.agents(), 22);
    assert!(gen_halting_car(Case::Major, 5, &p).is_err());
}

#[test]
fn oracle_attention_is_valid_and_constant() {
    let a = oracle_attention(5, 4, 0, 1).unwrap();
    let (err, nonneg) = a.normalization_error();
    assert!(err < 1e-12 && nonneg);
    assert_eq!(a.weight(2, 0, 1), 1.0);
    assert_eq!(a.weight(2, 1, 0), 1.0);
    assert_eq!(a.weight(2, 1, 3), 0.0);
    assert_eq!(a.row(3, 2), &[1.0 / 3.0; 3]);
    assert_eq!(smoothness_loss(&a), 0.0);
    assert!(oracle_attention(5, 4, 1, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_scenes_keep_invariants(seed in any::<u64>(), merge in any::<bool>(), first in any::<bool>()) {
        let p = ScenarioParams::default();
        let sample = if merge {
            gen_double_merge(if first { Case::Major } else { Case::Minor }, seed, &p).unwrap()
        } else {
            gen_halting_car(if first { Case::Stop } else { Case::Go }, seed, &p).unwrap()
        };
        let s = &sample.scene;
        prop_assert!(min_pairwise_distance(s) > p.safety_radius);
        // Background vehicles move with exactly constant velocity.
        for agent in 2..s.agents() {
            let d0 = (s.state(1, agent).x - s.state(0, agent).x, s.state(1, agent).y - s.state(0, agent).y);
            for t in 2..s.steps() {
                let d = (s.state(t, agent).x - s.state(t - 1, agent).x, s.state(t, agent).y - s.state(t - 1, agent).y);
                prop_assert!((d.0 - d0.0).abs() < 1e-12 && (d.1 - d0.1).abs() < 1e-12);
            }
        }
        if !merge {
            for t in 0..s.steps() {
                prop_assert!(s.state(t, 0).y < s.state(t, 1).y, "follower passed leader at {}", t);
            }
        }
        let c = s.first_centroid();
        prop_assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9);
        let again = if merge { gen_double_merge(sample.case.unwrap(), seed, &p) } else { gen_halting_car(sample.case.unwrap(), seed, &p) };
        prop_assert_eq!(again.unwrap(), sample);
    }
}

#[test]
fn dataset_composition() {
    let d = build_dataset(ScenarioKind::DoubleMerge, 50, 0.3, 1).unwrap();
    assert_eq!(d.train.len() + d.val.len(), 65);
    assert_eq!(d.val.len(), 13);
    assert_eq!(d.test.len(), 100);
    let count = |set: &[ScenarioSample], case| set.iter().filter(|s| s.case == Some(case)).count();
    assert_eq!(count(&d.train, Case::Major) + count(&d.val, Case::Major), 50);
    assert_eq!(count(&d.train, Case::Minor) + count(&d.val, Case::Minor), 15);
    assert_eq!(count(&d.test, Case::Minor), 50);
    // Train/val/test draws come from disjoint seed streams.
    let train_first: Vec<_> = d.train.iter().chain(&d.val).map(|s| s.scene.state(0, 0)).collect();
    assert!(d.test.iter().all(|s| !train_first.contains(&s.scene.state(0, 0))));

    let balanced = build_dataset(ScenarioKind::HaltingCar, 10, 1.0, 2).unwrap();
    let m = balanced.manifest.as_ref().unwrap();
    assert_eq!((m.spec.major_count, m.minor_count), (10, 10));
    assert_eq!(m.minor_case, Case::Go);

    for (major, ratio) in [(10, 0.3), (30, 0.5), (100, 0.3)] {
        let spec = DatasetSpec::new(ScenarioKind::DoubleMerge, major, ratio, 0);
        assert_eq!(spec.minor_count(), [3, 15, 30][[10, 30, 100].iter().position(|&m| m == major).unwrap()]);
    }
    assert!(build_dataset(ScenarioKind::DoubleMerge, 50, 0.0, 1).is_err());
    assert!(build_dataset(ScenarioKind::DoubleMerge, 50, 1.5, 1).is_err());
    assert!(build_dataset(ScenarioKind::DoubleMerge, 0, 0.3, 1).is_err());
}

#[test]
fn dataset_is_deterministic() {
    let a = build_dataset(ScenarioKind::HaltingCar, 5, 0.4, 9).unwrap();
    let b = build_dataset(ScenarioKind::HaltingCar, 5, 0.4, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.manifest.unwrap().to_json().unwrap(), b.manifest.unwrap().to_json().unwrap());
}
