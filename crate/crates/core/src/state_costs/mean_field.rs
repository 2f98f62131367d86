use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::StateCost;
use crate::batch::{dist_sq, StateBatch};
use crate::numerics::log_sum_exp;
use crate::{GsbmError, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Equal-weight isotropic Gaussian mixture `p̂(x) = (1/N) Σ N(x; μ_i, s_i² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDensity {
    means: StateBatch,
    stds: Vec<f64>,
}

impl MixtureDensity {
    pub fn new(means: StateBatch, stds: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(GsbmError::DegenerateBatch("mixture has no components".into()));
        }
        if stds.len() != means.len() {
            return Err(GsbmError::Contract(format!(
                "{} means but {} stds",
                means.len(),
                stds.len()
            )));
        }
        if let Some(s) = stds.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(GsbmError::InvalidArgument(format!("component std must be positive, got {s}")));
        }
        Ok(MixtureDensity { means, stds })
    }

    /// Kernel density estimate with a shared bandwidth.
    pub fn kde(samples: StateBatch, bandwidth: f64) -> Result<Self> {
        let n = samples.len();
        Self::new(samples, vec![bandwidth; n])
    }

    /// Scott's rule bandwidth for `samples`.
    pub fn scott_bandwidth(samples: &StateBatch) -> f64 {
        let n = samples.len().max(2) as f64;
        let d = samples.dim() as f64;
        let mean = samples.mean();
        let var = samples
            .rows()
            .map(|r| dist_sq(r, &mean))
            .sum::<f64>()
            / (d * (n - 1.0));
        var.sqrt().max(1e-3) * n.powf(-1.0 / (d + 4.0))
    }

    pub fn len(&self) -> usize {
        self.stds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stds.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means.dim()
    }

    pub fn means(&self) -> &StateBatch {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    fn log_terms(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim() as f64;
        self.means
            .rows()
            .zip(&self.stds)
            .map(|(m, &s)| -0.5 * dist_sq(x, m) / (s * s) - d * s.ln() - 0.5 * d * LOG_2PI)
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.log_terms(x)) - (self.len() as f64).ln()
    }

    /// `log p̂(x)` and its gradient.
    pub fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let terms = self.log_terms(x);
        let lse = log_sum_exp(&terms);
        grad.fill(0.0);
        for ((m, &s), lt) in self.means.rows().zip(&self.stds).zip(&terms) {
            let w = (lt - lse).exp();
            if w == 0.0 {
                continue;
            }
            for ((g, xi), mi) in grad.iter_mut().zip(x).zip(m) {
                *g -= w * (xi - mi) / (s * s);
            }
        }
        lse - (self.len() as f64).ln()
    }
}

/// `log p̂(x)`.
pub fn entropy_cost(x: &[f64], mixture: &MixtureDensity) -> f64 {
    mixture.log_density(x)
}

pub fn entropy_cost_grad(x: &[f64], mixture: &MixtureDensity, grad: &mut [f64]) -> f64 {
    mixture.log_density_grad(x, grad)
}

/// `mean_y 2/(‖x − y‖² + 1)`.
pub fn congestion_cost(x: &[f64], batch: &StateBatch) -> f64 {
    let n = batch.len().max(1) as f64;
    batch.rows().map(|y| 2.0 / (dist_sq(x, y) + 1.0)).sum::<f64>() / n
}

pub fn congestion_cost_grad(x: &[f64], batch: &StateBatch, grad: &mut [f64]) -> f64 {
    let n = batch.len().max(1) as f64;
    grad.fill(0.0);
    let mut total = 0.0;
    for y in batch.rows() {
        let q = dist_sq(x, y) + 1.0;
        total += 2.0 / q;
        let k = -4.0 / (q * q * n);
        for ((g, xi), yi) in grad.iter_mut().zip(x).zip(y) {
            *g += k * (xi - yi);
        }
    }
    total / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    Entropy,
    Congestion,
}

/// The population at one time: a density estimate and a sample batch.
#[derive(Debug, Clone)]
pub struct PopulationSnapshot {
    pub density: MixtureDensity,
    pub samples: StateBatch,
}

/// Population snapshots on a time grid; queries use the nearest time.
#[derive(Debug, Clone)]
pub struct Population {
    times: Vec<f64>,
    snapshots: Vec<PopulationSnapshot>,
}

impl Population {
    pub fn new(times: Vec<f64>, snapshots: Vec<PopulationSnapshot>) -> Result<Self> {
        if times.is_empty() || times.len() != snapshots.len() {
            return Err(GsbmError::Contract(format!(
                "{} times for {} snapshots",
                times.len(),
                snapshots.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GsbmError::InvalidArgument("snapshot times must increase".into()));
        }
        Ok(Population { times, snapshots })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[PopulationSnapshot] {
        &self.snapshots
    }

    pub fn at(&self, t: f64) -> &PopulationSnapshot {
        let k = self.times.partition_point(|&s| s < t);
        let idx = if k == 0 {
            0
        } else if k == self.times.len() {
            k - 1
        } else if t - self.times[k - 1] <= self.times[k] - t {
            k - 1
        } else {
            k
        };
        &self.snapshots[idx]
    }
}

/// `λ · log p̂_t(x)` or `λ · E_y[2/(‖x−y‖²+1)]` against a population.
#[derive(Debug, Clone)]
pub struct MeanFieldCost {
    pub interaction: Interaction,
    pub lambda: f64,
    pub population: Arc<Population>,
}

impl StateCost for MeanFieldCost {
    fn eval(&self, t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let snap = self.population.at(t);
        let v = match (self.interaction, grad) {
            (Interaction::Entropy, None) => entropy_cost(x, &snap.density),
            (Interaction::Congestion, None) => congestion_cost(x, &snap.samples),
            (Interaction::Entropy, Some(g)) => {
                let v = entropy_cost_grad(x, &snap.density, g);
                g.iter_mut().for_each(|gi| *gi *= self.lambda);
                v
            }
            (Interaction::Congestion, Some(g)) => {
                let v = congestion_cost_grad(x, &snap.samples, g);
                g.iter_mut().for_each(|gi| *gi *= self.lambda);
                v
            }
        };
        self.lambda * v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_costs::testing::fd_check;
    use rand::Rng;

    #[test]
    fn single_gaussian_density() {
        let m = MixtureDensity::new(StateBatch::from_rows(&[vec![0.0, 0.0]]), vec![1.0]).unwrap();
        assert!((entropy_cost(&[0.0, 0.0], &m) + 1.837_877_066).abs() < 1e-8);
        let mut prev = f64::INFINITY;
        for r in [0.0, 1.0, 3.0, 10.0, 30.0] {
            let v = entropy_cost(&[r, 0.0], &m);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn two_component_closed_form() {
        let m = MixtureDensity::new(
            StateBatch::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0]]),
            vec![0.7, 0.7],
        )
        .unwrap();
        let single = MixtureDensity::new(StateBatch::from_rows(&[vec![1.0, 0.0]]), vec![0.7]).unwrap();
        // equidistant from both components the mixture equals one component
        let x = [0.0, 0.4];
        assert!((entropy_cost(&x, &m) - entropy_cost(&x, &single)).abs() < 1e-12);
        let x = [0.3, 0.2];
        let la = entropy_cost(&x, &single);
        let lb = -0.5 * (1.3f64.powi(2) + 0.04) / 0.49 - 2.0 * 0.7f64.ln() - LOG_2PI;
        let want = ((la.exp() + lb.exp()) / 2.0).ln();
        assert!((entropy_cost(&x, &m) - want).abs() < 1e-12);
    }

    #[test]
    fn congestion_examples() {
        let b = StateBatch::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(congestion_cost(&[1.0, 2.0], &b), 2.0);
        let b = StateBatch::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(congestion_cost(&[1.0, 0.0], &b), 1.0);
    }

    #[test]
    fn gradients_match_fd() {
        let mut rng = crate::rng::rng_from_seed(4);
        let rows: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let samples = StateBatch::from_rows(&rows);
        let density = MixtureDensity::new(samples.clone(), vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0]).unwrap();
        let pop = Arc::new(
            Population::new(vec![0.0], vec![PopulationSnapshot { density, samples }]).unwrap(),
        );
        for interaction in [Interaction::Entropy, Interaction::Congestion] {
            let c = MeanFieldCost { interaction, lambda: 5.0, population: pop.clone() };
            for _ in 0..20 {
                let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                let err = fd_check(&c, 0.0, &x, 1e-5);
                assert!(err < 1e-4, "{interaction:?} {err}");
            }
        }
    }

    #[test]
    fn nearest_snapshot() {
        let snap = |v: f64| {
            let s = StateBatch::from_rows(&[vec![v]]);
            PopulationSnapshot { density: MixtureDensity::kde(s.clone(), 1.0).unwrap(), samples: s }
        };
        let p = Population::new(vec![0.0, 0.5, 1.0], vec![snap(0.0), snap(5.0), snap(10.0)]).unwrap();
        assert_eq!(p.at(0.2).samples.row(0)[0], 0.0);
        assert_eq!(p.at(0.3).samples.row(0)[0], 5.0);
        assert_eq!(p.at(2.0).samples.row(0)[0], 10.0);
    }
}
