use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !((0.0..1.0).contains(&self.b1) && (0.0..1.0).contains(&self.b2) && self.eps > 0.0) {
            return Err(Error::invalid(format!(
                "adam needs b1, b2 in [0, 1) and eps > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates of one parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    learning_rate: f64,
    config: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || moments.m.len() != n || moments.v.len() != n {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![n],
            rhs: vec![grads.len(), moments.m.len(), moments.v.len()],
        });
    }
    moments.t += 1;
    let t = moments.t as i32;
    let c1 = 1.0 - config.b1.powi(t);
    let c2 = 1.0 - config.b2.powi(t);
    for k in 0..n {
        let g = grads[k];
        let m = config.b1 * moments.m[k] + (1.0 - config.b1) * g;
        let v = config.b2 * moments.v[k] + (1.0 - config.b2) * g * g;
        moments.m[k] = m;
        moments.v[k] = v;
        params[k] -= learning_rate * (m / c1) / ((v / c2).sqrt() + config.eps);
    }
    Ok(())
}
