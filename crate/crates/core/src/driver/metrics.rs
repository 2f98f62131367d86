use serde::Serialize;

use super::sde::TrajectoryBatch;
use crate::batch::{dot, norm_sq, StateBatch};
use crate::matching::{Direction, DriftField};
use crate::numerics::mean_stderr;
use crate::state_costs::StateCost;
use crate::tasks::Corridor;
use crate::{GsbmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Monte Carlo estimate of `∫ E[½‖u_t‖² + V_t(X_t)] dt` along simulated
/// paths, using every `stride`-th grid point (left-point rule).
///
/// `u` is the field's own output, so with a base drift the kinetic part is
/// the control effort `½‖v‖²`.
pub fn estimate_objective(field: &DriftField, cost: &dyn StateCost, trajs: &TrajectoryBatch, stride: usize) -> Result<ObjectiveEstimate> {
    if field.direction() != Direction::Forward {
        return Err(GsbmError::Contract("objective is defined for the forward field".into()));
    }
    let stride = stride.max(1);
    let times = trajs.grid.times();
    let last = times.len() - 1;
    let mut per_traj = vec![0.0; trajs.len()];
    let mut k = 0;
    while k < last {
        let next = (k + stride).min(last);
        let dt = times[next] - times[k];
        let t = times[k];
        let x = &trajs.states[k];
        let u = field.drift_at(t, x);
        for (i, (xr, ur)) in x.rows().zip(u.rows()).enumerate() {
            per_traj[i] += (0.5 * norm_sq(ur) + cost.value(t, xr)) * dt;
        }
        k = next;
    }
    let (mean, stderr) = mean_stderr(&per_traj);
    Ok(ObjectiveEstimate { mean, stderr })
}

/// Histogram of pairwise cosine similarities on 50 uniform bins over
/// `[−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionalSimilarity {
    pub counts: Vec<u64>,
    /// Samples with zero norm, left out of every pair.
    pub skipped: usize,
}

pub const DIRSIM_BINS: usize = 50;

impl DirectionalSimilarity {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_edges() -> Vec<f64> {
        (0..=DIRSIM_BINS).map(|i| -1.0 + 2.0 * i as f64 / DIRSIM_BINS as f64).collect()
    }

    /// Fraction of pairs whose bin lies entirely in `|cos| > threshold`.
    pub fn mass_beyond(&self, threshold: f64) -> f64 {
        let edges = Self::bin_edges();
        let total = self.total().max(1) as f64;
        let hit: u64 = self
            .counts
            .iter()
            .enumerate()
            .filter(|(i, _)| edges[*i] >= threshold || edges[i + 1] <= -threshold)
            .map(|(_, c)| c)
            .sum();
        hit as f64 / total
    }
}

pub fn directional_similarity(x: &StateBatch) -> Result<DirectionalSimilarity> {
    if x.len() < 2 {
        return Err(GsbmError::InvalidArgument("need at least two samples".into()));
    }
    let norms: Vec<f64> = x.rows().map(|r| norm_sq(r).sqrt()).collect();
    let keep: Vec<usize> = (0..x.len()).filter(|&i| norms[i] > 0.0).collect();
    let mut counts = vec![0u64; DIRSIM_BINS];
    for (a, &i) in keep.iter().enumerate() {
        for &j in &keep[a + 1..] {
            let c = (dot(x.row(i), x.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            let bin = (((c + 1.0) / 2.0) * DIRSIM_BINS as f64) as usize;
            counts[bin.min(DIRSIM_BINS - 1)] += 1;
        }
    }
    Ok(DirectionalSimilarity {
        counts,
        skipped: x.len() - keep.len(),
    })
}

/// Fraction of trajectories whose first crossing of `x = gate_x` lies
/// inside the corridor. Trajectories that never cross count as outside.
pub fn corridor_fraction(trajs: &TrajectoryBatch, corridor: &Corridor) -> f64 {
    let n = trajs.len();
    if n == 0 {
        return 0.0;
    }
    let mut through = 0usize;
    for i in 0..n {
        for k in 0..trajs.states.len() - 1 {
            let (a, b) = (trajs.states[k].row(i), trajs.states[k + 1].row(i));
            let (da, db) = (a[0] - corridor.gate_x, b[0] - corridor.gate_x);
            if da == 0.0 || da * db < 0.0 {
                let w = if da == 0.0 { 0.0 } else { da / (da - db) };
                let y = a[1] + w * (b[1] - a[1]);
                if (y - corridor.center).abs() < corridor.half_width {
                    through += 1;
                }
                break;
            }
        }
    }
    through as f64 / n as f64
}
