use std::collections::HashSet;
use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::model::AgentState;
use crate::scenarios::{build_dataset, Case, ScenarioKind, ScenarioParams, Split};

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("a{i}")).collect()
}

fn ramp(id: &str, steps: usize, agents: usize) -> Scene {
    let frames = (0..steps)
        .map(|t| (0..agents).map(|i| AgentState::new(t as f64, i as f64 * 0.5)).collect())
        .collect();
    Scene::new(id, ids(agents), frames, steps).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn csv_round_trip_preserves_generated_scenes() {
    let params = ScenarioParams::default();
    let scenes: Vec<Scene> = [Case::Major, Case::Minor]
        .iter()
        .enumerate()
        .map(|(k, &case)| {
            let s = ScenarioKind::DoubleMerge.generate(case, k as u64, &params).unwrap();
            s.scene.with_id(format!("scene-{k}"))
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenes.csv");
    save_csv(&path, &scenes).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.len(), scenes.len());
    for (a, b) in scenes.iter().zip(&back) {
        assert_eq!(a.id(), b.id());
        assert_eq!(a.agent_ids(), b.agent_ids());
        assert_eq!(a.steps(), b.steps());
        assert_eq!(b.observed(), b.steps());
        for t in 0..a.steps() {
            for (p, q) in a.frame(t).iter().zip(b.frame(t)) {
                assert!((p.x - q.x).abs() <= 1e-9 && (p.y - q.y).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn header_and_timestamps_follow_the_format() {
    let mut buf = Vec::new();
    write_csv(&mut buf, &[ramp("s", 2, 2)]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scene_id,agent_id,step,timestamp_ms,x,y");
    assert_eq!(lines[1], "s,a0,0,0,0.0000000000,0.0000000000");
    assert_eq!(lines[4], "s,a1,1,100,1.0000000000,0.5000000000");
}

#[test]
fn single_agent_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "one.csv", "scene_id,agent_id,step,timestamp_ms,x,y\ns,a,0,0,1,2\ns,a,1,100,1,3\n");
    assert!(matches!(load_csv(&path), Err(Error::Format { .. })));
}

#[test]
fn malformed_rows_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = "scene_id,agent_id,step,timestamp_ms,x,y\ns,a,0,0,1,2\ns,b,0,0,oops,2\n";
    match load_csv(&write(dir.path(), "bad.csv", text)) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("x"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let dup = "scene_id,agent_id,step,timestamp_ms,x,y\ns,a,0,0,1,2\ns,a,0,0,1,2\n";
    assert!(matches!(load_csv(&write(dir.path(), "dup.csv", dup)), Err(Error::Parse { line: 3, .. })));
    let missing = "scene_id,agent_id,step,x\ns,a,0,1\n";
    assert!(matches!(load_csv(&write(dir.path(), "cols.csv", missing)), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn empty_files_are_structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_csv(&write(dir.path(), "empty.csv", "")), Err(Error::Format { .. })));
    let header_only = "scene_id,agent_id,step,timestamp_ms,x,y\n";
    assert!(matches!(load_csv(&write(dir.path(), "h.csv", header_only)), Err(Error::Format { .. })));
    assert!(matches!(load_csv(&dir.path().join("absent.csv")), Err(Error::Io { .. })));
}

#[test]
fn interaction_tracks_are_cropped_to_the_full_cast() {
    // Track 3 appears late and track 1 leaves early: only frames 3..=5 have all three.
    let mut text = String::from("case_id,track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy\n");
    for frame in 1..=8 {
        for track in [1, 2, 3] {
            let present = match track {
                1 => frame <= 5,
                3 => frame >= 3,
                _ => true,
            };
            if present {
                text += &format!("7,{track},{frame},{},car,{}.5,{},0,0\n", frame * 100, track, frame);
            }
        }
    }
    text += "8,1,1,100,car,0,0,0,0\n8,2,1,100,car,1,1,0,0\n";
    let dir = tempfile::tempdir().unwrap();
    let scenes = load_csv(&write(dir.path(), "track.csv", &text)).unwrap();
    assert_eq!(scenes.len(), 2);
    let s = &scenes[0];
    assert_eq!(s.id(), "track-7");
    assert_eq!(s.agent_ids(), &["1", "2", "3"]);
    assert_eq!(s.steps(), 3);
    assert_eq!(s.state(0, 2), AgentState::new(3.5, 3.0));
    assert_eq!(s.state(2, 0), AgentState::new(1.5, 5.0));
    assert_eq!(scenes[1].steps(), 1);
}

#[test]
fn gaps_split_the_presence_interval() {
    let mut text = String::from("scene_id,agent_id,step,timestamp_ms,x,y\n");
    for step in [0, 1, 3, 4, 5] {
        for agent in ["a", "b"] {
            text += &format!("s,{agent},{step},0,{step},0\n");
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let s = &load_csv(&write(dir.path(), "gap.csv", &text)).unwrap()[0];
    assert_eq!(s.steps(), 3);
    assert_eq!(s.state(0, 0).x, 3.0);
}

#[test]
fn hundred_step_scenes_window_into_forty_observed() {
    let spec = WindowSpec::new(100, 40, 100).unwrap();
    let w = window(&[ramp("r", 100, 3)], spec).unwrap();
    assert_eq!(w.scenes.len(), 1);
    assert_eq!(w.skipped, 0);
    assert_eq!(w.scenes[0].observed(), 40);
    assert_eq!(w.scenes[0].horizon(), 60);
}

#[test]
fn window_counts_and_boundaries() {
    let spec = WindowSpec::new(100, 40, 100).unwrap();
    let w = window(&[ramp("short", 99, 2), ramp("long", 250, 2)], spec).unwrap();
    assert_eq!(w.skipped, 1);
    assert_eq!(w.scenes.len(), 2);
    assert_eq!(spec.count(250), 2);
    assert_eq!(spec.count(99), 0);
    // stride == window: consecutive, non-overlapping.
    assert_eq!(w.scenes[0].state(0, 0).x, 0.0);
    assert_eq!(w.scenes[1].state(0, 0).x, 100.0);
    assert_eq!(w.scenes[1].state(99, 0).x, 199.0);

    let overlapping = window(&[ramp("o", 12, 2)], WindowSpec::new(5, 2, 3).unwrap()).unwrap();
    assert_eq!(overlapping.scenes.len(), 3);
    assert_eq!(overlapping.scenes[2].state(0, 0).x, 6.0);
}

#[test]
fn window_spec_is_validated() {
    assert!(WindowSpec::new(10, 0, 1).is_err());
    assert!(WindowSpec::new(10, 10, 1).is_err());
    assert!(WindowSpec::new(10, 4, 0).is_err());
}

#[test]
fn split_ratios_and_seed_stability() {
    let items: Vec<usize> = (0..10).collect();
    let (a, b, c) = split(items.clone(), [0.8, 0.1, 0.1], 5).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    assert_eq!(split(items.clone(), [0.8, 0.1, 0.1], 5).unwrap(), (a, b, c));
    assert!(split(items.clone(), [0.8, 0.1, 0.2], 5).is_err());
    assert!(split(items, [1.2, -0.1, -0.1], 5).is_err());
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 0usize..60, f0 in 0.0f64..1.0, f1 in 0.0f64..1.0, seed in any::<u64>()) {
        let f1 = f1 * (1.0 - f0);
        let fractions = [f0, f1, 1.0 - f0 - f1];
        let (a, b, c) = split((0..n).collect::<Vec<_>>(), fractions, seed).unwrap();
        let sets: Vec<HashSet<usize>> = [&a, &b, &c].iter().map(|v| v.iter().copied().collect()).collect();
        prop_assert_eq!(a.len() + b.len() + c.len(), n);
        prop_assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
        let all: HashSet<usize> = sets.iter().flatten().copied().collect();
        prop_assert_eq!(all, (0..n).collect::<HashSet<_>>());
    }

    #[test]
    fn windows_are_valid_scenes(steps in 2usize..40, len in 2usize..20, obs_frac in 0.0f64..1.0, stride in 1usize..7) {
        let observed = 1 + ((len - 1) as f64 * obs_frac) as usize;
        prop_assume!(observed < len);
        let spec = WindowSpec::new(len, observed, stride).unwrap();
        let out = window(&[ramp("p", steps, 3)], spec).unwrap();
        prop_assert_eq!(out.scenes.len(), spec.count(steps));
        for (k, w) in out.scenes.iter().enumerate() {
            prop_assert_eq!(w.steps(), len);
            prop_assert_eq!(w.observed(), observed);
            prop_assert_eq!(w.state(0, 0).x, (k * stride) as f64);
        }
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dataset = build_dataset(ScenarioKind::HaltingCar, 5, 0.4, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &dataset).unwrap();
    assert!(dir.path().join(MANIFEST_FILE).exists());
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, dataset.manifest);
    assert!(back.has_oracle());
    for split in Split::ALL {
        let (a, b) = (dataset.split(split), back.split(split));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.scene.id(), y.scene.id());
            assert_eq!(x.scene.observed(), y.scene.observed());
            assert_eq!((x.case, x.main_agents, &x.highlight), (y.case, y.main_agents, &y.highlight));
            assert_eq!(x.correct_attention, y.correct_attention);
            for t in 0..x.scene.steps() {
                for (p, q) in x.scene.frame(t).iter().zip(y.scene.frame(t)) {
                    assert!((p.x - q.x).abs() <= 1e-9 && (p.y - q.y).abs() <= 1e-9);
                }
            }
        }
    }

    // Without the manifest the scenes load unlabeled.
    std::fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
    let bare = load_dataset(dir.path()).unwrap();
    assert!(!bare.has_oracle());
    assert_eq!(bare.test.len(), dataset.test.len());
    assert_eq!(bare.test[0].scene.observed(), bare.test[0].scene.steps());
}

#[test]
fn dataset_directories_are_byte_identical_per_seed() {
    let read_all = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for split in ["train", "val", "test"] {
            let mut files: Vec<_> = std::fs::read_dir(dir.join(split)).unwrap().map(|e| e.unwrap().path()).collect();
            files.sort();
            out.extend(files.into_iter().map(|p| (p.display().to_string().replace(&dir.display().to_string(), ""), std::fs::read(p).unwrap())));
        }
        out.push(("manifest".into(), std::fs::read(dir.join(MANIFEST_FILE)).unwrap()));
        out
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_dataset(d1.path(), &build_dataset(ScenarioKind::DoubleMerge, 4, 0.5, 3).unwrap()).unwrap();
    save_dataset(d2.path(), &build_dataset(ScenarioKind::DoubleMerge, 4, 0.5, 3).unwrap()).unwrap();
    assert_eq!(read_all(d1.path()), read_all(d2.path()));
}

#[test]
fn missing_dataset_pieces_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_dataset(&dir.path().join("nope")).is_err());
    assert!(load_dataset(dir.path()).is_err());
    let dataset = build_dataset(ScenarioKind::DoubleMerge, 3, 0.4, 1).unwrap();
    save_dataset(dir.path(), &dataset).unwrap();
    let victim = dir.path().join("test").join(format!("{}.csv", dataset.test[0].scene.id()));
    std::fs::remove_file(victim).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains(dataset.test[0].scene.id()), "{err}");
}
