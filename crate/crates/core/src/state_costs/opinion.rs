use std::f64::consts::PI;
use std::sync::Arc;

use super::{Population, ReferenceDrift};
use crate::batch::{dot, norm_sq, StateBatch};

fn normalized(y: &[f64]) -> Vec<f64> {
    let n = norm_sq(y).sqrt();
    if n == 0.0 {
        return vec![0.0; y.len()];
    }
    let s = n.sqrt();
    y.iter().map(|v| v / s).collect()
}

/// Polarizing opinion drift `f(x) = E_y[a(x, y, ξ) ȳ]` with
/// `ȳ = y/‖y‖^{1/2}` and `a = ±1` by whether `x` and `y` fall on the same
/// side of the shared signal `ξ`.
pub fn polarize_drift(states: &StateBatch, population: &StateBatch, xi: &[f64]) -> StateBatch {
    let dim = states.dim();
    let n = population.len().max(1) as f64;
    let mut pos = vec![0.0; dim];
    let mut neg = vec![0.0; dim];
    for y in population.rows() {
        let yb = normalized(y);
        let side = if dot(y, xi) >= 0.0 { &mut pos } else { &mut neg };
        for (a, b) in side.iter_mut().zip(&yb) {
            *a += b;
        }
    }
    let mut out = StateBatch::zeros(states.len(), dim);
    for (i, x) in states.rows().enumerate() {
        let (same, other) = if dot(x, xi) >= 0.0 { (&pos, &neg) } else { (&neg, &pos) };
        for ((o, s), r) in out.row_mut(i).iter_mut().zip(same).zip(other) {
            *o = (s - r) / n;
        }
    }
    out
}

/// The polarize drift averaged over a standard normal signal `ξ`:
/// `f̄(x) = E_y[(1 − 2θ(x, y)/π) ȳ]` with `θ` the angle between `x` and `y`.
#[derive(Debug, Clone)]
pub struct MeanPolarizeDrift {
    pub population: Arc<Population>,
}

impl MeanPolarizeDrift {
    fn angle_terms(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
        let nx = norm_sq(x).sqrt();
        let ny = norm_sq(y).sqrt();
        if nx == 0.0 || ny == 0.0 {
            return None;
        }
        let cos = (dot(x, y) / (nx * ny)).clamp(-1.0, 1.0);
        Some((cos, nx, ny))
    }
}

impl ReferenceDrift for MeanPolarizeDrift {
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let pop = &self.population.at(t).samples;
        let n = pop.len().max(1) as f64;
        out.fill(0.0);
        for y in pop.rows() {
            let Some((cos, _, _)) = Self::angle_terms(x, y) else { continue };
            let a = 1.0 - 2.0 * cos.acos() / PI;
            for (o, b) in out.iter_mut().zip(normalized(y)) {
                *o += a * b / n;
            }
        }
    }

    fn vjp(&self, t: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        let pop = &self.population.at(t).samples;
        let n = pop.len().max(1) as f64;
        for y in pop.rows() {
            let Some((cos, nx, ny)) = Self::angle_terms(x, y) else { continue };
            let sin = (1.0 - cos * cos).sqrt().max(1e-6);
            let wy = dot(w, &normalized(y));
            // d a/dx = (2/π)/sin θ · d cos θ/dx
            let k = 2.0 / (PI * sin) * wy / n;
            for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
                *o += k * (yi / (nx * ny) - cos * xi / (nx * nx));
            }
        }
    }
}
