use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::csv_io::{load_csv, save_csv};
use crate::error::{Error, Result};
use crate::model::Scene;
use crate::scenarios::{Dataset, DatasetManifest, ScenarioSample, Split};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `dir/{train,val,test}/<scene id>.csv` plus `dir/manifest.json` when
/// the dataset has one.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    for split in Split::ALL {
        let sub = dir.join(split.as_str());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for sample in dataset.split(split) {
            save_csv(&sub.join(format!("{}.csv", sample.scene.id())), std::slice::from_ref(&sample.scene))?;
        }
    }
    if let Some(manifest) = &dataset.manifest {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest.to_json()? + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads a dataset directory.
///
/// With a manifest, samples come back in manifest order with their labels and
/// observed length restored. Without one, every CSV scene is unlabeled and
/// entirely observed.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            message: "dataset directory does not exist".into(),
        });
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        Some(DatasetManifest::from_json(&text, &manifest_path)?)
    } else {
        None
    };
    let mut splits: HashMap<Split, Vec<ScenarioSample>> = HashMap::new();
    for split in Split::ALL {
        let sub = dir.join(split.as_str());
        let mut scenes: Vec<Scene> = Vec::new();
        for file in csv_files(&sub)? {
            scenes.extend(load_csv(&file)?);
        }
        let samples = match &manifest {
            None => scenes.into_iter().map(ScenarioSample::unlabeled).collect(),
            Some(m) => {
                let mut by_id: HashMap<String, Scene> =
                    scenes.into_iter().map(|s| (s.id().to_string(), s)).collect();
                let mut samples = Vec::new();
                for info in m.samples.iter().filter(|s| s.split == split) {
                    let scene = by_id.remove(&info.id).ok_or_else(|| Error::Format {
                        path: sub.clone(),
                        message: format!("scene {} listed in the manifest is missing", info.id),
                    })?;
                    samples.push(info.label(scene.with_observed(m.spec.params.observed)?)?);
                }
                if let Some(extra) = by_id.keys().min() {
                    return Err(Error::Format {
                        path: sub,
                        message: format!("scene {extra} is not listed in the manifest"),
                    });
                }
                samples
            }
        };
        splits.insert(split, samples);
    }
    let mut take = |s: Split| splits.remove(&s).unwrap_or_default();
    let dataset = Dataset {
        train: take(Split::Train),
        val: take(Split::Val),
        test: take(Split::Test),
        manifest,
    };
    if Split::ALL.iter().all(|&s| dataset.split(s).is_empty()) {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            message: "no scenes in train/, val/ or test/".into(),
        });
    }
    Ok(dataset)
}
