//! Trajectory files, windowing, splits and dataset directories.
//!
//! # Trajectory CSV
//!
//! UTF-8, comma separated, `.` decimal separator, mandatory header:
//!
//! ```text
//! scene_id,agent_id,step,timestamp_ms,x,y
//! ```
//!
//! One row per agent per step. Coordinates are written with exactly 10
//! decimals, so a round trip preserves them to 1e-9 or better.
//! `timestamp_ms` is `step * 100` on write and ignored on read.
//!
//! Files with INTERACTION track columns (`track_id,frame_id,timestamp_ms,x,y`,
//! optional `case_id`, extra columns ignored) are also accepted; each
//! `case_id` becomes one scene.

mod csv_io;
mod layout;

pub use csv_io::{load_csv, save_csv, write_csv, COORD_DECIMALS, CSV_HEADER, STEP_MS};
pub use layout::{load_dataset, save_dataset, MANIFEST_FILE};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::Scene;
use crate::seed::stream_rng;

/// Sliding-window parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub window: usize,
    pub observed: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(window: usize, observed: usize, stride: usize) -> Result<Self> {
        let spec = WindowSpec {
            window,
            observed,
            stride,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.observed == 0 || self.observed >= self.window || self.stride == 0 {
            return Err(Error::invalid(format!(
                "window spec needs 0 < observed < window and stride >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Number of windows a scene of `steps` steps yields.
    pub fn count(&self, steps: usize) -> usize {
        if steps < self.window {
            0
        } else {
            (steps - self.window) / self.stride + 1
        }
    }
}

/// Windows cut from a list of scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub scenes: Vec<Scene>,
    /// Input scenes shorter than the window.
    pub skipped: usize,
}

/// Cuts every scene into standalone windows of `spec.window` steps.
pub fn window(scenes: &[Scene], spec: WindowSpec) -> Result<Windows> {
    spec.validate()?;
    let mut out = Windows {
        scenes: Vec::new(),
        skipped: 0,
    };
    for scene in scenes {
        let count = spec.count(scene.steps());
        if count == 0 {
            out.skipped += 1;
        }
        for k in 0..count {
            out.scenes.push(scene.window(k * spec.stride, spec.window, spec.observed)?);
        }
    }
    Ok(out)
}

/// Shuffles `items` by `seed` and cuts them into train/val/test.
///
/// Train and validation sizes are rounded; test takes the remainder.
pub fn split<T>(mut items: Vec<T>, fractions: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    let n = items.len();
    items.shuffle(&mut stream_rng(seed, "data/split", 0));
    let n_train = ((n as f64 * fractions[0]).round() as usize).min(n);
    let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
    let test = items.split_off(n_train + n_val);
    let val = items.split_off(n_train);
    Ok((items, val, test))
}

#[cfg(test)]
mod tests;
