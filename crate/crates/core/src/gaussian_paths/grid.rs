use serde::{Deserialize, Serialize};

use crate::error::{GsbmError, Result};

/// Strictly increasing time points on `[0, 1]` with `t_0 = 0` and `t_last = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub const DEFAULT_STEPS: usize = 1000;

    pub fn uniform(n_steps: usize) -> Self {
        assert!(n_steps >= 1, "a time grid needs at least one step");
        let times = (0..=n_steps).map(|k| k as f64 / n_steps as f64).collect();
        TimeGrid { times }
    }

    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(GsbmError::InvalidArgument("time grid needs at least two points".into()));
        }
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 {
            return Err(GsbmError::InvalidArgument("time grid must start at 0 and end at 1".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GsbmError::InvalidArgument("time grid must be strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        match self.times.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.times.len() => self.times.len() - 1,
            Err(i) => {
                if t - self.times[i - 1] <= self.times[i] - t {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}
