use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::batch::StateBatch;
use crate::gaussian_paths::{conditional_drift_into, GaussianPath, T_CLAMP};
use crate::rng::Rng;
use crate::{GsbmError, Result};

/// Regression data for the explicit loss: one row per sample, each with
/// its pair, time, state and conditional-drift target.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchBatch {
    pub x0: StateBatch,
    pub x1: StateBatch,
    pub times: Vec<f64>,
    pub states: StateBatch,
    pub targets: StateBatch,
}

impl MatchBatch {
    pub fn new(x0: StateBatch, x1: StateBatch, times: Vec<f64>, states: StateBatch, targets: StateBatch) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(GsbmError::Contract("empty match batch".into()));
        }
        if [x0.len(), x1.len(), states.len(), targets.len()].iter().any(|&m| m != n) {
            return Err(GsbmError::Contract("match batch rows disagree".into()));
        }
        if times.iter().any(|t| !(T_CLAMP..=1.0 - T_CLAMP).contains(t)) {
            return Err(GsbmError::Contract("match time outside the clamp window".into()));
        }
        if !targets.all_finite() || !states.all_finite() {
            return Err(GsbmError::Contract("non-finite match targets".into()));
        }
        Ok(MatchBatch {
            x0,
            x1,
            times,
            states,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Draws `n` rows: a uniformly chosen path, `t ~ U[ε, 1−ε]`,
    /// `X_t ~ N(μ_t, γ_t²I)` and the conditional drift at `X_t`.
    pub fn from_paths(paths: &[GaussianPath], n: usize, sigma: f64, rng: &mut Rng) -> Result<Self> {
        if paths.is_empty() {
            return Err(GsbmError::Contract("no paths to sample".into()));
        }
        let d = paths[0].dim();
        let mut x0 = StateBatch::zeros(n, d);
        let mut x1 = StateBatch::zeros(n, d);
        let mut states = StateBatch::zeros(n, d);
        let mut targets = StateBatch::zeros(n, d);
        let mut times = Vec::with_capacity(n);
        for i in 0..n {
            let p = &paths[rng.gen_range(0..paths.len())];
            let t = rng.gen_range(T_CLAMP..1.0 - T_CLAMP);
            let pt = p.eval(t)?;
            let x = states.row_mut(i);
            for c in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                x[c] = pt.mean[c] + pt.std * z;
            }
            conditional_drift_into(p, states.row(i), t, sigma, targets.row_mut(i))?;
            x0.row_mut(i).copy_from_slice(p.x0());
            x1.row_mut(i).copy_from_slice(p.x1());
            times.push(t);
        }
        Self::new(x0, x1, times, states, targets)
    }
}

/// Samples for the implicit loss: boundary draws from both marginals and
/// interior `(t, X_t)` draws from the path mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitBatch {
    pub boundary0: StateBatch,
    pub boundary1: StateBatch,
    pub times: Vec<f64>,
    pub states: StateBatch,
}

impl ImplicitBatch {
    pub fn new(boundary0: StateBatch, boundary1: StateBatch, times: Vec<f64>, states: StateBatch) -> Result<Self> {
        if boundary0.is_empty() || boundary1.is_empty() || times.is_empty() {
            return Err(GsbmError::Contract("implicit batch needs boundary and interior samples".into()));
        }
        if times.len() != states.len() {
            return Err(GsbmError::Contract("one time per interior state".into()));
        }
        if boundary0.dim() != states.dim() || boundary1.dim() != states.dim() {
            return Err(GsbmError::Contract("implicit batch dimensions disagree".into()));
        }
        Ok(ImplicitBatch {
            boundary0,
            boundary1,
            times,
            states,
        })
    }

    pub fn from_paths(paths: &[GaussianPath], n: usize, rng: &mut Rng) -> Result<Self> {
        if paths.is_empty() {
            return Err(GsbmError::Contract("no paths to sample".into()));
        }
        let d = paths[0].dim();
        let mut b0 = StateBatch::zeros(n, d);
        let mut b1 = StateBatch::zeros(n, d);
        let mut states = StateBatch::zeros(n, d);
        let mut times = Vec::with_capacity(n);
        for i in 0..n {
            b0.row_mut(i).copy_from_slice(paths[rng.gen_range(0..paths.len())].x0());
            b1.row_mut(i).copy_from_slice(paths[rng.gen_range(0..paths.len())].x1());
            let p = &paths[rng.gen_range(0..paths.len())];
            let t = rng.gen_range(T_CLAMP..1.0 - T_CLAMP);
            let pt = p.eval(t)?;
            for (c, x) in states.row_mut(i).iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *x = pt.mean[c] + pt.std * z;
            }
            times.push(t);
        }
        Self::new(b0, b1, times, states)
    }
}
