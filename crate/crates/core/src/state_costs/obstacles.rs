use serde::{Deserialize, Serialize};

use super::StateCost;
use crate::numerics::sigmoid;

/// Planar obstacle primitives with an (approximate) signed distance that is
/// positive outside the obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { center: [f64; 2], radius: f64 },
    /// Axis-aligned ellipse; distance is the normalized radius scaled by the
    /// shorter semi-axis.
    Ellipse { center: [f64; 2], radii: [f64; 2] },
    /// Axis-aligned box (slabs, walls).
    Rect { min: [f64; 2], max: [f64; 2] },
    /// Everything outside the neck `|y| < sqrt(c_sq + coef·x²)`.
    HyperbolicNeck { c_sq: f64, coef: f64 },
}

impl Obstacle {
    pub fn signed_distance(&self, x: &[f64]) -> (f64, [f64; 2]) {
        let (px, py) = (x[0], x[1]);
        match *self {
            Obstacle::Circle { center, radius } => {
                let (dx, dy) = (px - center[0], py - center[1]);
                let r = (dx * dx + dy * dy).sqrt().max(1e-12);
                (r - radius, [dx / r, dy / r])
            }
            Obstacle::Ellipse { center, radii } => {
                let (dx, dy) = (px - center[0], py - center[1]);
                let (u, v) = (dx / radii[0], dy / radii[1]);
                let q = (u * u + v * v).sqrt().max(1e-12);
                let s = radii[0].min(radii[1]);
                (s * (q - 1.0), [s * u / (radii[0] * q), s * v / (radii[1] * q)])
            }
            Obstacle::Rect { min, max } => {
                let c = [(min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0];
                let h = [(max[0] - min[0]) / 2.0, (max[1] - min[1]) / 2.0];
                let d = [px - c[0], py - c[1]];
                let q = [d[0].abs() - h[0], d[1].abs() - h[1]];
                let sgn = [d[0].signum(), d[1].signum()];
                let out = [q[0].max(0.0), q[1].max(0.0)];
                let on = (out[0] * out[0] + out[1] * out[1]).sqrt();
                if on > 0.0 {
                    (on, [sgn[0] * out[0] / on, sgn[1] * out[1] / on])
                } else if q[0] > q[1] {
                    (q[0], [sgn[0], 0.0])
                } else {
                    (q[1], [0.0, sgn[1]])
                }
            }
            Obstacle::HyperbolicNeck { c_sq, coef } => {
                let w = (c_sq + coef * px * px).sqrt();
                (w - py.abs(), [coef * px / w, -py.signum()])
            }
        }
    }

    /// Inside the obstacle (signed distance negative).
    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x).0 < 0.0
    }
}

/// Softened obstacle indicator scaled by `lambda`:
/// `λ Σ_i sigmoid(−φ_i|φ_i| / τ²)` with `φ_i` the signed distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleField {
    pub obstacles: Vec<Obstacle>,
    pub temperature: f64,
    pub lambda: f64,
}

impl ObstacleField {
    pub const DEFAULT_TEMPERATURE: f64 = 0.1;

    pub fn new(obstacles: Vec<Obstacle>, lambda: f64) -> Self {
        ObstacleField {
            obstacles,
            temperature: Self::DEFAULT_TEMPERATURE,
            lambda,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.obstacles.iter().any(|o| o.contains(x))
    }
}

pub fn obstacle_cost(x: &[f64], field: &ObstacleField) -> f64 {
    field.eval(0.0, x, None)
}

impl StateCost for ObstacleField {
    fn eval(&self, _t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let tau2 = self.temperature * self.temperature;
        let mut total = 0.0;
        let mut g = [0.0; 2];
        for o in &self.obstacles {
            let (phi, dphi) = o.signed_distance(x);
            let s = sigmoid(-phi * phi.abs() / tau2);
            total += s;
            let ds = s * (1.0 - s) * (-2.0 * phi.abs() / tau2);
            g[0] += ds * dphi[0];
            g[1] += ds * dphi[1];
        }
        if let Some(out) = grad {
            out.fill(0.0);
            out[0] = self.lambda * g[0];
            out[1] = self.lambda * g[1];
        }
        self.lambda * total
    }
}
