use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::batch::StateBatch;
use crate::gaussian_paths::{TimeGrid, Trajectory};
use crate::matching::{Direction, DriftField};
use crate::rng::Rng;
use crate::state_costs::polarize_drift;
use crate::{GsbmError, Result};

/// A drift added to the learned field during simulation.
pub trait SimulationDrift: Send + Sync {
    /// Adds the drift at time `t` for the current batch to `out`.
    fn add_to(&self, t: f64, states: &StateBatch, rng: &mut Rng, out: &mut StateBatch);
}

/// The polarize drift with the simulated batch as its population and a
/// fresh shared signal `ξ ~ N(0, I)` at every step.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolarizeBase;

impl SimulationDrift for PolarizeBase {
    fn add_to(&self, _t: f64, states: &StateBatch, rng: &mut Rng, out: &mut StateBatch) {
        let xi: Vec<f64> = (0..states.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let f = polarize_drift(states, states, &xi);
        for (o, v) in out.as_flat_mut().iter_mut().zip(f.as_flat()) {
            *o += v;
        }
    }
}

/// Simulated paths stored step-major: `states[k]` holds every trajectory at
/// grid time `k`.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub grid: Arc<TimeGrid>,
    pub states: Vec<StateBatch>,
    /// Brownian increments per step (unscaled); empty once time is reversed.
    pub increments: Vec<StateBatch>,
    /// `∫ ½‖v‖² dt` per trajectory, with `v` the learned part of the drift.
    pub kinetic: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.states[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.states[0].is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn initial(&self) -> &StateBatch {
        &self.states[0]
    }

    pub fn terminal(&self) -> &StateBatch {
        self.states.last().expect("at least one step")
    }

    /// States of every trajectory at the grid point nearest `t`.
    pub fn at_time(&self, t: f64) -> &StateBatch {
        &self.states[self.grid.nearest(t)]
    }

    /// Trajectory `i` as a standalone path.
    pub fn trajectory(&self, i: usize) -> Result<Trajectory> {
        let d = self.dim();
        let mut s = StateBatch::zeros(self.states.len(), d);
        for (k, b) in self.states.iter().enumerate() {
            s.row_mut(k).copy_from_slice(b.row(i));
        }
        let inc = if self.increments.is_empty() {
            None
        } else {
            let mut w = StateBatch::zeros(self.increments.len(), d);
            for (k, b) in self.increments.iter().enumerate() {
                w.row_mut(k).copy_from_slice(b.row(i));
            }
            Some(w)
        };
        Trajectory::new(self.grid.clone(), s, inc)
    }

    /// Same paths indexed by `1 − t`.
    pub fn time_reversed(mut self) -> Result<Self> {
        let times: Vec<f64> = self.grid.times().iter().rev().map(|t| 1.0 - t).collect();
        self.grid = Arc::new(TimeGrid::new(times)?);
        self.states.reverse();
        self.increments.clear();
        Ok(self)
    }
}

/// Euler–Maruyama rollout `X_{k+1} = X_k + u(t_k, X_k)Δt + σ ΔW_k`.
///
/// The field is evaluated in its own time. A backward field therefore
/// starts from target samples, and the returned batch is put back in
/// forward time (its first row is the end of the simulation).
pub fn simulate_sde(
    field: &DriftField,
    init: &StateBatch,
    sigma: f64,
    grid: &Arc<TimeGrid>,
    rng: &mut Rng,
    base_drift: Option<&dyn SimulationDrift>,
) -> Result<TrajectoryBatch> {
    if init.dim() != field.dim() {
        return Err(GsbmError::Contract(format!(
            "initial states have dimension {}, field expects {}",
            init.dim(),
            field.dim()
        )));
    }
    let n = init.len();
    let d = init.dim();
    let times = grid.times();
    let mut states = Vec::with_capacity(times.len());
    let mut increments = Vec::with_capacity(grid.n_steps());
    let mut kinetic = vec![0.0; n];
    let mut x = init.clone();
    states.push(x.clone());
    for k in 0..grid.n_steps() {
        let t = times[k];
        let dt = grid.dt(k);
        let mut u = field.drift_at(t, &x);
        for (i, row) in u.rows().enumerate() {
            kinetic[i] += 0.5 * row.iter().map(|v| v * v).sum::<f64>() * dt;
        }
        if let Some(b) = base_drift {
            b.add_to(t, &x, rng, &mut u);
        }
        let sq = dt.sqrt();
        let mut dw = StateBatch::zeros(n, d);
        for w in dw.as_flat_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = sq * z;
        }
        for ((xv, uv), wv) in x.as_flat_mut().iter_mut().zip(u.as_flat()).zip(dw.as_flat()) {
            *xv += uv * dt + sigma * wv;
        }
        if !x.all_finite() {
            return Err(GsbmError::NonFiniteState { step: k + 1 });
        }
        states.push(x.clone());
        increments.push(dw);
    }
    let batch = TrajectoryBatch {
        grid: grid.clone(),
        states,
        increments,
        kinetic,
    };
    match field.direction() {
        Direction::Forward => Ok(batch),
        Direction::Backward => batch.time_reversed(),
    }
}

/// A field whose output is `a·x + b` in one dimension.
#[cfg(test)]
pub(crate) fn affine_field(a: f64, b: f64, direction: Direction) -> DriftField {
    use crate::matching::{FieldKind, NetConfig, Network};
    let mut net = Network::new(NetConfig::new(1, 1, 4), &mut crate::rng::rng_from_seed(0)).unwrap();
    net.set_affine_potential(&[a], b);
    DriftField::from_network(FieldKind::Explicit, direction, net).unwrap()
}
