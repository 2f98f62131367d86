//! State costs `V_t(x)` and reference drifts.

mod kdtree;
mod lidar;
mod mean_field;
mod obstacles;
mod opinion;

use std::sync::Arc;

pub use kdtree::KdTree;
pub use lidar::{fit_tangent_plane, lidar_cost, project_to_plane, LidarCost, PointCloud, TangentPlane, LIDAR_LAMBDA};
pub use mean_field::{
    congestion_cost, congestion_cost_grad, entropy_cost, entropy_cost_grad, Interaction, MeanFieldCost, MixtureDensity,
    Population, PopulationSnapshot,
};
pub use obstacles::{obstacle_cost, Obstacle, ObstacleField};
pub use opinion::{polarize_drift, MeanPolarizeDrift};

/// A state cost `V_t(x)`.
pub trait StateCost: Send + Sync {
    /// Returns `V_t(x)`; when `grad` is given, writes `∇ₓV_t(x)` into it.
    fn eval(&self, t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64;

    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.eval(t, x, None)
    }
}

impl<C: StateCost + ?Sized> StateCost for Arc<C> {
    fn eval(&self, t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        (**self).eval(t, x, grad)
    }
}

impl<C: StateCost + ?Sized> StateCost for &C {
    fn eval(&self, t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        (**self).eval(t, x, grad)
    }
}

/// `V ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCost;

impl StateCost for ZeroCost {
    fn eval(&self, _t: f64, _x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad {
            g.fill(0.0);
        }
        0.0
    }
}

/// `V ≡ c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantCost(pub f64);

impl StateCost for ConstantCost {
    fn eval(&self, _t: f64, _x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad {
            g.fill(0.0);
        }
        self.0
    }
}

/// `V(x) = α‖σx‖²`, the cost with an analytic conditional solution.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticCost {
    pub alpha: f64,
    pub sigma: f64,
}

impl StateCost for QuadraticCost {
    fn eval(&self, _t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let k = self.alpha * self.sigma * self.sigma;
        if let Some(g) = grad {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = 2.0 * k * xi;
            }
        }
        k * x.iter().map(|v| v * v).sum::<f64>()
    }
}

/// `V + c`.
#[derive(Clone)]
pub struct ShiftedCost<C> {
    pub inner: C,
    pub shift: f64,
}

impl<C: StateCost> StateCost for ShiftedCost<C> {
    fn eval(&self, t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        self.inner.eval(t, x, grad) + self.shift
    }
}

/// Sum of terms.
#[derive(Clone, Default)]
pub struct SumCost {
    terms: Vec<Arc<dyn StateCost>>,
}

impl SumCost {
    pub fn new() -> Self {
        SumCost { terms: Vec::new() }
    }

    pub fn with(mut self, term: Arc<dyn StateCost>) -> Self {
        self.terms.push(term);
        self
    }

    pub fn push(&mut self, term: Arc<dyn StateCost>) {
        self.terms.push(term);
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl StateCost for SumCost {
    fn eval(&self, t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match grad {
            None => self.terms.iter().map(|c| c.eval(t, x, None)).sum(),
            Some(g) => {
                g.fill(0.0);
                let mut tmp = vec![0.0; x.len()];
                let mut total = 0.0;
                for c in &self.terms {
                    total += c.eval(t, x, Some(&mut tmp));
                    for (a, b) in g.iter_mut().zip(&tmp) {
                        *a += b;
                    }
                }
                total
            }
        }
    }
}

/// A drift added to the learned control, `u = f + v`.
pub trait ReferenceDrift: Send + Sync {
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Adds `J_f(x)ᵀ w` into `out`.
    fn vjp(&self, t: f64, x: &[f64], w: &[f64], out: &mut [f64]);
}
