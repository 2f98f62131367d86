use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::grid::TimeGrid;
use super::path::{conditional_drift_into, GaussianPath};
use crate::batch::StateBatch;
use crate::error::{GsbmError, Result};
use crate::numerics::adaptive_simpson;
use crate::rng::Rng;

/// One discretized sample path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Arc<TimeGrid>,
    /// `n_steps + 1` rows.
    pub states: StateBatch,
    /// `n_steps` Brownian increments `ΔW_k` (not scaled by σ).
    pub increments: Option<StateBatch>,
}

impl Trajectory {
    pub fn new(grid: Arc<TimeGrid>, states: StateBatch, increments: Option<StateBatch>) -> Result<Self> {
        if states.len() != grid.times().len() {
            return Err(GsbmError::Contract(format!(
                "trajectory has {} states for a grid of {} points",
                states.len(),
                grid.times().len()
            )));
        }
        if let Some(inc) = &increments {
            if inc.len() + 1 != states.len() || inc.dim() != states.dim() {
                return Err(GsbmError::Contract("increments must have one row fewer than states".into()));
            }
        }
        Ok(Trajectory {
            grid,
            states,
            increments,
        })
    }

    pub fn dim(&self) -> usize {
        self.states.dim()
    }
}

/// Reparametrized marginal draws `μ_t + γ_t Z`, with the `Z` used.
#[derive(Debug, Clone)]
pub struct MarginalSamples {
    pub states: StateBatch,
    pub noise: StateBatch,
}

pub fn sample_marginal(path: &GaussianPath, t: f64, n: usize, rng: &mut Rng) -> Result<MarginalSamples> {
    let pt = path.eval(t)?;
    let d = path.dim();
    let mut states = StateBatch::zeros(n, d);
    let mut noise = StateBatch::zeros(n, d);
    for i in 0..n {
        let z = noise.row_mut(i);
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let zc = noise.row(i).to_vec();
        for (j, x) in states.row_mut(i).iter_mut().enumerate() {
            *x = pt.mean[j] + pt.std * zc[j];
        }
    }
    Ok(MarginalSamples { states, noise })
}

/// `g_t = ∫ a_τ dτ` on the given increasing times, with `g` at the first
/// time set to zero (only differences enter the covariance).
pub fn integrate_gain(path: &GaussianPath, sigma: f64, times: &[f64]) -> Result<Vec<f64>> {
    let mut g = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    g.push(0.0);
    let a = |t: f64| {
        let s = path.eval_std(t);
        if s.std == 0.0 {
            f64::NAN
        } else {
            (s.dstd - sigma * sigma / (2.0 * s.std)) / s.std
        }
    };
    for w in times.windows(2) {
        let seg = adaptive_simpson(&a, w[0], w[1], 1e-14);
        if !seg.is_finite() {
            return Err(GsbmError::Singularity { t: w[0], sigma });
        }
        acc += seg;
        g.push(acc);
    }
    Ok(g)
}

/// `Cov(s, t) = γ²_{min(s,t)} exp(g_{max(s,t)} − g_{min(s,t)})`.
pub fn covariance_from_gain(times: &[f64], gamma: &[f64], g: &[f64]) -> DMatrix<f64> {
    let n = times.len();
    DMatrix::from_fn(n, n, |i, j| {
        let (lo, hi) = if times[i] <= times[j] { (i, j) } else { (j, i) };
        gamma[lo] * gamma[lo] * (g[hi] - g[lo]).exp()
    })
}

/// Grid covariance of the linear conditional SDE at the interior grid times.
pub fn path_covariance(path: &GaussianPath, sigma: f64, times: &[f64]) -> Result<DMatrix<f64>> {
    let g = integrate_gain(path, sigma, times)?;
    let gamma: Vec<f64> = times.iter().map(|&t| path.eval_std(t).std).collect();
    Ok(covariance_from_gain(times, &gamma, &g))
}

fn cholesky_with_jitter(mut c: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch.l());
    }
    let max_diag = (0..n).map(|i| c[(i, i)]).fold(0.0, f64::max);
    for i in 0..n {
        c[(i, i)] += 1e-9 * max_diag;
    }
    c.cholesky()
        .map(|ch| ch.l())
        .ok_or(GsbmError::NotPositiveDefinite { size: n })
}

/// Exact joint samples of the conditional linear SDE on `grid`.
///
/// Interior grid states are drawn from the Gaussian process with the
/// covariance above (Cholesky factor of the grid covariance); the endpoints
/// are the pinned `x0`, `x1`. Brownian increments consistent with the
/// clamped conditional drift are recovered from each sampled path.
pub fn sample_trajectory_joint(
    path: &GaussianPath,
    sigma: f64,
    grid: &Arc<TimeGrid>,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Trajectory>> {
    if !(sigma > 0.0) {
        return Err(GsbmError::InvalidArgument("joint sampling needs sigma > 0".into()));
    }
    if path.is_deterministic() {
        return Err(GsbmError::Singularity { t: 0.5, sigma });
    }
    let times = grid.times();
    let interior: Vec<f64> = times[1..times.len() - 1].to_vec();
    let d = path.dim();
    let m = interior.len();
    let chol = if m > 0 {
        Some(cholesky_with_jitter(path_covariance(path, sigma, &interior)?)?)
    } else {
        None
    };
    let means: Vec<Vec<f64>> = interior.iter().map(|&t| path.eval(t).map(|p| p.mean)).collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut states = StateBatch::zeros(times.len(), d);
        states.row_mut(0).copy_from_slice(path.x0());
        states.row_mut(times.len() - 1).copy_from_slice(path.x1());
        if let Some(l) = &chol {
            let z = DMatrix::<f64>::from_fn(m, d, |_, _| rng.sample(StandardNormal));
            let lz = l * z;
            for i in 0..m {
                let row = states.row_mut(i + 1);
                for c in 0..d {
                    row[c] = means[i][c] + lz[(i, c)];
                }
            }
        }
        let increments = recover_increments(path, sigma, grid, &states)?;
        out.push(Trajectory::new(grid.clone(), states, Some(increments))?);
    }
    Ok(out)
}

/// `ΔW_k = (X_{k+1} − X_k − u(t_k, X_k) Δt) / σ` under the conditional drift.
pub fn recover_increments(path: &GaussianPath, sigma: f64, grid: &TimeGrid, states: &StateBatch) -> Result<StateBatch> {
    let d = path.dim();
    let mut inc = StateBatch::zeros(grid.n_steps(), d);
    let mut u = vec![0.0; d];
    for k in 0..grid.n_steps() {
        let t = grid.times()[k];
        let dt = grid.dt(k);
        conditional_drift_into(path, states.row(k), t, sigma, &mut u)?;
        let (xk, xk1) = (states.row(k), states.row(k + 1));
        let row = inc.row_mut(k);
        for c in 0..d {
            row[c] = (xk1[c] - xk[c] - u[c] * dt) / sigma;
        }
    }
    Ok(inc)
}
