use std::sync::Arc;

use super::path::{bridge_profile, GaussianPath, KnotLayout};
use crate::error::{GsbmError, Result};

/// Coefficients of the analytic solution under `V(x) = α‖σx‖²`:
/// `X_t ~ N(c_t x0 + e_t x1, γ_t² I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticBridge {
    pub c: f64,
    pub e: f64,
    pub gamma: f64,
}

pub fn quadratic_bridge_coeffs(t: f64, alpha: f64, sigma: f64) -> Result<QuadraticBridge> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GsbmError::TimeDomain { t });
    }
    if !(alpha > 0.0) || !(sigma > 0.0) {
        return Err(GsbmError::InvalidArgument("alpha and sigma must be positive".into()));
    }
    let eta = sigma * (2.0 * alpha).sqrt();
    let s1 = (eta * (1.0 - t)).sinh();
    let c = s1 / eta.sinh();
    let e = (eta * (1.0 - t)).cosh() - c * eta.cosh();
    let gamma = sigma * (s1 / eta * e).max(0.0).sqrt();
    Ok(QuadraticBridge { c, e, gamma })
}

/// Brownian bridge `μ_t = (1−t)x0 + t x1`, `γ_t = σ sqrt(t(1−t))` on `k`
/// uniform interior knots.
pub fn brownian_bridge(x0: &[f64], x1: &[f64], sigma: f64, k: usize) -> Result<GaussianPath> {
    if k < 1 {
        return Err(GsbmError::InvalidArgument("need at least one knot".into()));
    }
    brownian_bridge_on(KnotLayout::uniform(k), x0, x1, sigma)
}

pub fn brownian_bridge_on(layout: Arc<KnotLayout>, x0: &[f64], x1: &[f64], sigma: f64) -> Result<GaussianPath> {
    if !(sigma >= 0.0) {
        return Err(GsbmError::InvalidArgument("sigma must be non-negative".into()));
    }
    let d = x0.len();
    let mut mean = Vec::with_capacity(layout.len() * d);
    for &t in layout.times() {
        mean.extend(x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b));
    }
    let std = layout.times().iter().map(|&t| sigma * bridge_profile(t).0).collect();
    let mut path = GaussianPath::new(layout, x0.to_vec(), x1.to_vec(), mean, std)?;
    path.set_edge_ratio(sigma, sigma);
    Ok(path)
}

/// Path whose knots sit on the quadratic-cost analytic solution.
pub fn quadratic_bridge_path(layout: Arc<KnotLayout>, x0: &[f64], x1: &[f64], alpha: f64, sigma: f64) -> Result<GaussianPath> {
    let d = x0.len();
    let mut mean = Vec::with_capacity(layout.len() * d);
    let mut std = Vec::with_capacity(layout.len());
    for &t in layout.times() {
        let q = quadratic_bridge_coeffs(t, alpha, sigma)?;
        mean.extend(x0.iter().zip(x1).map(|(a, b)| q.c * a + q.e * b));
        std.push(q.gamma);
    }
    let mut path = GaussianPath::new(layout, x0.to_vec(), x1.to_vec(), mean, std)?;
    path.set_edge_ratio(sigma, sigma);
    Ok(path)
}
