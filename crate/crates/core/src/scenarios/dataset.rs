use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{oracle_attention, Case, ScenarioKind, ScenarioParams, ScenarioSample};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream_rng};

/// Bumped whenever generated trajectories change for a given seed.
pub const GENERATOR_VERSION: u32 = 1;
const MANIFEST_FORMAT: &str = "smoothattn-dataset";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Composition of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub scenario: ScenarioKind,
    pub major_case: Case,
    pub major_count: usize,
    /// Minor-case training samples as a fraction of `major_count`.
    pub minor_ratio: f64,
    pub seed: u64,
    pub test_per_case: usize,
    /// Fraction of each case's training samples held out for validation.
    pub val_fraction: f64,
    pub params: ScenarioParams,
}

impl DatasetSpec {
    pub fn new(scenario: ScenarioKind, major_count: usize, minor_ratio: f64, seed: u64) -> Self {
        DatasetSpec {
            scenario,
            major_case: scenario.cases()[0],
            major_count,
            minor_ratio,
            seed,
            test_per_case: 50,
            val_fraction: 0.2,
            params: ScenarioParams::default(),
        }
    }

    pub fn minor_case(&self) -> Case {
        let [a, b] = self.scenario.cases();
        if self.major_case == a {
            b
        } else {
            a
        }
    }

    pub fn minor_count(&self) -> usize {
        (self.major_count as f64 * self.minor_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scenario.cases().contains(&self.major_case) {
            return Err(Error::invalid(format!(
                "{} has no {} case",
                self.scenario, self.major_case
            )));
        }
        if !(self.minor_ratio > 0.0 && self.minor_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "minor ratio must lie in (0, 1], got {}",
                self.minor_ratio
            )));
        }
        if self.major_count < 1 || self.minor_count() < 1 || self.test_per_case < 1 {
            return Err(Error::invalid(format!(
                "sample counts must be >= 1 (major {}, minor {}, test {})",
                self.major_count,
                self.minor_count(),
                self.test_per_case
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        self.params.validate()
    }

    pub fn build(&self) -> Result<Dataset> {
        self.validate()?;
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        let mut split_rng = stream_rng(self.seed, "data/split", 0);
        for (case, count) in [
            (self.major_case, self.major_count),
            (self.minor_case(), self.minor_count()),
        ] {
            let mut pool = self.generate(case, count, "train")?;
            pool.shuffle(&mut split_rng);
            let held = (count as f64 * self.val_fraction).round() as usize;
            let held = held.min(count - 1);
            val.extend(pool.drain(..held));
            train.extend(pool);
            test.extend(self.generate(case, self.test_per_case, "test")?);
        }
        let mut samples = Vec::new();
        for (split, set) in [(Split::Train, &train), (Split::Val, &val), (Split::Test, &test)] {
            samples.extend(set.iter().map(|s| SampleInfo::of(s, split)));
        }
        let manifest = DatasetManifest {
            format: MANIFEST_FORMAT.into(),
            generator_version: GENERATOR_VERSION,
            minor_case: self.minor_case(),
            minor_count: self.minor_count(),
            spec: self.clone(),
            samples,
        };
        Ok(Dataset {
            train,
            val,
            test,
            manifest: Some(manifest),
        })
    }

    fn generate(&self, case: Case, count: usize, stream: &str) -> Result<Vec<ScenarioSample>> {
        (0..count)
            .map(|k| {
                let seed = derive_seed(self.seed, &format!("data/{stream}/{case}"), k as u64);
                let sample = self.scenario.generate(case, seed, &self.params)?;
                let id = format!("{stream}-{case}-{k:03}");
                Ok(ScenarioSample {
                    scene: sample.scene.with_id(id),
                    ..sample
                })
            })
            .collect()
    }
}

/// Train/validation/test sets over one scenario.
pub fn build_dataset(
    scenario: ScenarioKind,
    major_count: usize,
    minor_ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    DatasetSpec::new(scenario, major_count, minor_ratio, seed).build()
}

/// Labels of one stored sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub id: String,
    pub split: Split,
    pub case: Option<Case>,
    pub main_agents: Option<[usize; 2]>,
    /// Half-open step range `[start, end)`.
    pub highlight: Option<[usize; 2]>,
}

impl SampleInfo {
    fn of(sample: &ScenarioSample, split: Split) -> Self {
        SampleInfo {
            id: sample.scene.id().to_string(),
            split,
            case: sample.case,
            main_agents: sample.main_agents,
            highlight: sample.highlight.as_ref().map(|r| [r.start, r.end]),
        }
    }

    /// Reattaches these labels to a loaded scene.
    pub fn label(&self, scene: crate::model::Scene) -> Result<ScenarioSample> {
        let correct_attention = match self.main_agents {
            Some([a, b]) => Some(oracle_attention(scene.steps(), scene.agents(), a, b)?),
            None => None,
        };
        Ok(ScenarioSample {
            scene,
            case: self.case,
            main_agents: self.main_agents,
            correct_attention,
            highlight: self.highlight.map(|[s, e]| s..e),
        })
    }
}

/// Everything needed to regenerate or relabel a dataset. Contains no
/// timestamps so regeneration is byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub generator_version: u32,
    pub spec: DatasetSpec,
    pub minor_case: Case,
    pub minor_count: usize,
    pub samples: Vec<SampleInfo>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &std::path::Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(text).map_err(|e| Error::Format {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format {
                path: origin.to_path_buf(),
                message: format!("not a dataset manifest (format {:?})", manifest.format),
            });
        }
        Ok(manifest)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<ScenarioSample>,
    pub val: Vec<ScenarioSample>,
    pub test: Vec<ScenarioSample>,
    pub manifest: Option<DatasetManifest>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[ScenarioSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Whether every sample carries oracle attention.
    pub fn has_oracle(&self) -> bool {
        Split::ALL
            .iter()
            .flat_map(|&s| self.split(s))
            .all(|s| s.correct_attention.is_some())
    }
}
