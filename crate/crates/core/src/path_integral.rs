//! Importance weighting and resampling of conditional trajectories toward
//! the path-integral optimum of the conditional control problem.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};

use crate::gaussian_paths::{conditional_drift_into, sample_trajectory_joint, GaussianPath, TimeGrid, Trajectory};
use crate::numerics::log_sum_exp;
use crate::rng::Rng;
use crate::state_costs::StateCost;
use crate::{GsbmError, Result};

/// Trajectories per pair used for resampling.
pub const DEFAULT_RESAMPLE_COUNT: usize = 16;

/// Trajectories with unnormalized log importance weights.
#[derive(Debug, Clone)]
pub struct WeightedBatch {
    pub trajectories: Vec<Trajectory>,
    pub log_weights: Vec<f64>,
}

impl WeightedBatch {
    pub fn new(trajectories: Vec<Trajectory>, log_weights: Vec<f64>) -> Result<Self> {
        if trajectories.len() != log_weights.len() {
            return Err(GsbmError::Contract(format!(
                "{} trajectories with {} weights",
                trajectories.len(),
                log_weights.len()
            )));
        }
        Ok(WeightedBatch {
            trajectories,
            log_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    /// `log Z = log Σ exp(log ω_i)`.
    pub fn log_normalizer(&self) -> f64 {
        log_sum_exp(&self.log_weights)
    }

    /// Weights divided by their sum; fails when no weight is positive and
    /// finite.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        if self.log_weights.is_empty() {
            return Err(GsbmError::DegenerateBatch("empty batch".into()));
        }
        if self.log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(GsbmError::DegenerateBatch("non-finite log weight".into()));
        }
        let lz = self.log_normalizer();
        if !lz.is_finite() {
            return Err(GsbmError::DegenerateBatch("all weights are zero".into()));
        }
        Ok(self.log_weights.iter().map(|w| (w - lz).exp()).collect())
    }

    /// Effective sample size `(Σω)² / Σω²`.
    pub fn ess(&self) -> Result<f64> {
        let w = self.normalized_weights()?;
        Ok(1.0 / w.iter().map(|v| v * v).sum::<f64>())
    }

    /// Self-normalized estimate of `E[f(X)]`.
    pub fn weighted_mean(&self, f: impl Fn(&Trajectory) -> f64) -> Result<f64> {
        let w = self.normalized_weights()?;
        Ok(self.trajectories.iter().zip(&w).map(|(t, w)| w * f(t)).sum())
    }
}

/// `log ω = −∫ (V_t + ½‖v_t‖²)/σ² dt − ∫ v_tᵀ dW_t / σ` with left-point sums
/// over the trajectory grid and its stored increments.
pub fn girsanov_log_weight<F>(traj: &Trajectory, drift: F, cost: &dyn StateCost, sigma: f64) -> Result<f64>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(sigma > 0.0) {
        return Err(GsbmError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let inc = traj
        .increments
        .as_ref()
        .ok_or_else(|| GsbmError::Contract("trajectory has no Brownian increments".into()))?;
    let d = traj.dim();
    let s2 = sigma * sigma;
    let mut v = vec![0.0; d];
    let mut total = 0.0;
    for k in 0..traj.grid.n_steps() {
        let t = traj.grid.times()[k];
        let dt = traj.grid.dt(k);
        let x = traj.states.row(k);
        drift(t, x, &mut v)?;
        let cost_k = cost.value(t, x);
        if !cost_k.is_finite() {
            return Err(GsbmError::NonFiniteCost {
                t,
                x: x.to_vec(),
                value: cost_k,
            });
        }
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let vdw: f64 = v.iter().zip(inc.row(k)).map(|(a, b)| a * b).sum();
        total -= (cost_k + 0.5 * vv) / s2 * dt + vdw / sigma;
    }
    Ok(total)
}

/// Log weight of a trajectory proposed from the conditional drift of `path`.
pub fn path_log_weight(traj: &Trajectory, path: &GaussianPath, cost: &dyn StateCost, sigma: f64) -> Result<f64> {
    girsanov_log_weight(traj, |t, x, out| conditional_drift_into(path, x, t, sigma, out), cost, sigma)
}

/// Resampled trajectories with the indices drawn and the batch ESS.
#[derive(Debug, Clone)]
pub struct Resampled {
    pub trajectories: Vec<Trajectory>,
    pub indices: Vec<usize>,
    pub ess: f64,
}

/// Multinomial resampling with replacement proportional to the normalized
/// weights; returns as many trajectories as the batch holds.
pub fn pi_resample(batch: &WeightedBatch, rng: &mut Rng) -> Result<Resampled> {
    let w = batch.normalized_weights()?;
    let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
    let dist = WeightedIndex::new(&w).map_err(|e| GsbmError::DegenerateBatch(e.to_string()))?;
    let indices: Vec<usize> = (0..w.len()).map(|_| dist.sample(rng)).collect();
    let trajectories = indices.iter().map(|&i| batch.trajectories[i].clone()).collect();
    Ok(Resampled {
        trajectories,
        indices,
        ess,
    })
}

/// Samples `n` trajectories from `path`, weights them and resamples.
pub fn impt_sample(
    path: &GaussianPath,
    cost: &dyn StateCost,
    sigma: f64,
    grid: &Arc<TimeGrid>,
    n: usize,
    rng: &mut Rng,
) -> Result<Resampled> {
    if n == 0 {
        return Err(GsbmError::InvalidArgument("need at least one trajectory".into()));
    }
    let trajectories = sample_trajectory_joint(path, sigma, grid, n, rng)?;
    let log_weights = trajectories
        .iter()
        .map(|t| path_log_weight(t, path, cost, sigma))
        .collect::<Result<Vec<_>>>()?;
    pi_resample(&WeightedBatch::new(trajectories, log_weights)?, rng)
}
