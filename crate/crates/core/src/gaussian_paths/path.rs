use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::spline::{Extrapolation, SplineBasis, Stencil};
use crate::condsoc::KineticMetric;
use crate::error::{GsbmError, Result};

/// Lower bound on the evaluated standard deviation inside `(0, 1)`.
pub const GAMMA_MIN: f64 = 1e-4;
/// Drift and objective evaluations restrict `t` to `[T_CLAMP, 1 - T_CLAMP]`.
pub const T_CLAMP: f64 = 1e-3;
/// Default number of interior knots.
pub const DEFAULT_KNOTS: usize = 30;

pub(crate) fn bridge_profile(t: f64) -> (f64, f64) {
    let r = (t * (1.0 - t)).max(0.0).sqrt();
    let dr = if r > 0.0 { (1.0 - 2.0 * t) / (2.0 * r) } else { f64::INFINITY };
    (r, dr)
}

/// Knot times and the spline basis shared by every path using them.
///
/// The mean spline runs through `x0`, the interior knots and `x1`. The std
/// is `sqrt(t(1-t)) * s(t)` where `s` is a natural spline through the edge
/// ratios at `t = 0, 1` and `γ_k / sqrt(t_k(1-t_k))` at the knots, so
/// `γ(t_k) = γ_k`, both ends are pinned at zero and a Brownian bridge has
/// constant `s`. Both splines use the same nodes.
#[derive(Debug)]
pub struct KnotLayout {
    times: Vec<f64>,
    basis: SplineBasis,
    profile: Vec<f64>,
    metric: OnceLock<KineticMetric>,
}

impl KnotLayout {
    pub fn uniform(k: usize) -> Arc<Self> {
        assert!(k >= 1, "need at least one interior knot");
        let times = (1..=k).map(|i| i as f64 / (k + 1) as f64).collect();
        Self::new(times).expect("uniform knots are valid")
    }

    pub fn new(times: Vec<f64>) -> Result<Arc<Self>> {
        if times.is_empty() || times.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(GsbmError::InvalidArgument("knot times must lie in (0, 1)".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GsbmError::InvalidArgument("knot times must increase".into()));
        }
        let mut nodes = Vec::with_capacity(times.len() + 2);
        nodes.push(0.0);
        nodes.extend_from_slice(&times);
        nodes.push(1.0);
        let profile = times.iter().map(|&t| bridge_profile(t).0).collect();
        Ok(Arc::new(KnotLayout {
            basis: SplineBasis::natural(nodes, Extrapolation::Clamp),
            times,
            profile,
            metric: OnceLock::new(),
        }))
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub(crate) fn mean_basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub(crate) fn ratio_basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub(crate) fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub(crate) fn kinetic_metric(&self) -> &KineticMetric {
        self.metric.get_or_init(|| KineticMetric::new(self, T_CLAMP))
    }

    /// Knot layout of the time-reversed path (`t -> 1 - t`).
    pub fn reversed(&self) -> Arc<Self> {
        let times = self.times.iter().rev().map(|t| 1.0 - t).collect();
        Self::new(times).expect("reflected knots are valid")
    }
}

/// Mean, std and their time derivatives at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub mean: Vec<f64>,
    pub std: f64,
    pub dmean: Vec<f64>,
    pub dstd: f64,
}

/// Intermediate evaluation state kept for backpropagation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StdEval {
    pub std: f64,
    pub dstd: f64,
    pub r: f64,
    pub dr: f64,
    pub stencil: Stencil,
    /// True when the floor (or a deterministic path) fixed the value.
    pub frozen: bool,
}

/// Gaussian conditional path pinned at `x0` (t = 0) and `x1` (t = 1).
#[derive(Debug, Clone)]
pub struct GaussianPath {
    layout: Arc<KnotLayout>,
    dim: usize,
    x0: Vec<f64>,
    x1: Vec<f64>,
    mean_knots: Vec<f64>,
    std_knots: Vec<f64>,
    /// `s(0)` and `s(1)`; a finite-energy conditional path has both equal to `σ`.
    edge_ratio: [f64; 2],
    // derived
    mean_nodes: Vec<f64>,
    mean_m2: Vec<f64>,
    ratio_nodes: Vec<f64>,
    ratio_m2: Vec<f64>,
    deterministic: bool,
}

impl GaussianPath {
    pub fn new(
        layout: Arc<KnotLayout>,
        x0: Vec<f64>,
        x1: Vec<f64>,
        mean_knots: Vec<f64>,
        std_knots: Vec<f64>,
    ) -> Result<Self> {
        let dim = x0.len();
        let k = layout.len();
        if dim == 0 || x1.len() != dim {
            return Err(GsbmError::InvalidArgument("endpoint dimensions differ".into()));
        }
        if mean_knots.len() != k * dim || std_knots.len() != k {
            return Err(GsbmError::InvalidArgument(format!(
                "expected {k} knots of dimension {dim}, got {} mean values and {} std values",
                mean_knots.len(),
                std_knots.len()
            )));
        }
        if std_knots.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(GsbmError::InvalidArgument("std knots must be finite and non-negative".into()));
        }
        let profile = layout.profile();
        let edge_ratio = [std_knots[0] / profile[0], std_knots[k - 1] / profile[k - 1]];
        let mut path = GaussianPath {
            layout,
            dim,
            x0,
            x1,
            mean_knots,
            std_knots,
            edge_ratio,
            mean_nodes: Vec::new(),
            mean_m2: Vec::new(),
            ratio_nodes: Vec::new(),
            ratio_m2: Vec::new(),
            deterministic: false,
        };
        path.refresh();
        Ok(path)
    }

    fn refresh(&mut self) {
        let d = self.dim;
        let mut nodes = Vec::with_capacity((self.layout.len() + 2) * d);
        nodes.extend_from_slice(&self.x0);
        nodes.extend_from_slice(&self.mean_knots);
        nodes.extend_from_slice(&self.x1);
        self.mean_m2 = self.layout.mean_basis().second_derivatives(&nodes, d);
        self.mean_nodes = nodes;
        let mut ratio = Vec::with_capacity(self.layout.len() + 2);
        ratio.push(self.edge_ratio[0]);
        ratio.extend(self.std_knots.iter().zip(self.layout.profile()).map(|(g, r)| g / r));
        ratio.push(self.edge_ratio[1]);
        self.ratio_m2 = self.layout.ratio_basis().second_derivatives(&ratio, 1);
        self.ratio_nodes = ratio;
        self.deterministic = self.std_knots.iter().all(|g| *g == 0.0) && self.edge_ratio == [0.0, 0.0];
    }

    pub fn set_knots(&mut self, mean_knots: &[f64], std_knots: &[f64]) {
        assert_eq!(mean_knots.len(), self.mean_knots.len());
        assert_eq!(std_knots.len(), self.std_knots.len());
        self.mean_knots.copy_from_slice(mean_knots);
        self.std_knots.copy_from_slice(std_knots);
        self.refresh();
    }

    /// Replaces the edge ratios `s(0)`, `s(1)`.
    pub fn set_edge_ratio(&mut self, start: f64, end: f64) {
        assert!(start >= 0.0 && end >= 0.0, "edge ratios must be non-negative");
        self.edge_ratio = [start, end];
        self.refresh();
    }

    pub fn edge_ratio(&self) -> [f64; 2] {
        self.edge_ratio
    }

    pub fn layout(&self) -> &Arc<KnotLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn mean_knots(&self) -> &[f64] {
        &self.mean_knots
    }

    pub fn std_knots(&self) -> &[f64] {
        &self.std_knots
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// Same path seen in reversed time `s = 1 - t` (endpoints swapped).
    pub fn reversed(&self) -> GaussianPath {
        let d = self.dim;
        let k = self.layout.len();
        let mut mean = Vec::with_capacity(k * d);
        for i in (0..k).rev() {
            mean.extend_from_slice(&self.mean_knots[i * d..(i + 1) * d]);
        }
        let std = self.std_knots.iter().rev().copied().collect();
        let mut rev = GaussianPath::new(self.layout.reversed(), self.x1.clone(), self.x0.clone(), mean, std)
            .expect("reversal preserves validity");
        rev.set_edge_ratio(self.edge_ratio[1], self.edge_ratio[0]);
        rev
    }

    pub(crate) fn mean_stencil(&self, t: f64) -> Stencil {
        self.layout.mean_basis().stencil(t)
    }

    pub(crate) fn eval_mean_into(&self, st: &Stencil, mean: &mut [f64], dmean: &mut [f64]) {
        self.layout
            .mean_basis()
            .eval_into(st, &self.mean_nodes, &self.mean_m2, self.dim, mean, dmean);
    }

    pub(crate) fn eval_std(&self, t: f64) -> StdEval {
        let basis = self.layout.ratio_basis();
        let stencil = basis.stencil(t);
        let (r, dr) = bridge_profile(t);
        if self.deterministic {
            return StdEval {
                std: 0.0,
                dstd: 0.0,
                r,
                dr,
                stencil,
                frozen: true,
            };
        }
        let (mut s, mut ds) = ([0.0], [0.0]);
        basis.eval_into(&stencil, &self.ratio_nodes, &self.ratio_m2, 1, &mut s, &mut ds);
        if t <= 0.0 || t >= 1.0 {
            let dstd = if s[0] == 0.0 { 0.0 } else { dr * s[0] };
            return StdEval {
                std: 0.0,
                dstd,
                r,
                dr,
                stencil,
                frozen: true,
            };
        }
        let std = r * s[0];
        if std < GAMMA_MIN {
            return StdEval {
                std: GAMMA_MIN,
                dstd: 0.0,
                r,
                dr,
                stencil,
                frozen: true,
            };
        }
        StdEval {
            std,
            dstd: dr * s[0] + r * ds[0],
            r,
            dr,
            stencil,
            frozen: false,
        }
    }

    /// Mean, std and time derivatives at `t ∈ [0, 1]`.
    pub fn eval(&self, t: f64) -> Result<PathPoint> {
        if !(0.0..=1.0).contains(&t) {
            return Err(GsbmError::TimeDomain { t });
        }
        let st = self.mean_stencil(t);
        let mut mean = vec![0.0; self.dim];
        let mut dmean = vec![0.0; self.dim];
        self.eval_mean_into(&st, &mut mean, &mut dmean);
        if t == 0.0 {
            mean.copy_from_slice(&self.x0);
        } else if t == 1.0 {
            mean.copy_from_slice(&self.x1);
        }
        let s = self.eval_std(t);
        Ok(PathPoint {
            mean,
            std: s.std,
            dmean,
            dstd: s.dstd,
        })
    }

    /// The scalar `a_t` of the conditional drift, at the clamped time.
    pub fn drift_gain(&self, t: f64, sigma: f64) -> Result<f64> {
        let t = t.clamp(T_CLAMP, 1.0 - T_CLAMP);
        let s = self.eval_std(t);
        gain(s.std, s.dstd, sigma, t)
    }
}

pub(crate) fn gain(std: f64, dstd: f64, sigma: f64, t: f64) -> Result<f64> {
    if std == 0.0 {
        if sigma == 0.0 {
            return Ok(0.0);
        }
        return Err(GsbmError::Singularity { t, sigma });
    }
    Ok((dstd - sigma * sigma / (2.0 * std)) / std)
}

/// Conditional drift `∂tμ + a_t (x − μ_t)` with `a_t = (∂tγ − σ²/(2γ))/γ`.
/// `t` is clamped to `[T_CLAMP, 1 − T_CLAMP]`.
pub fn conditional_drift(path: &GaussianPath, x: &[f64], t: f64, sigma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GsbmError::TimeDomain { t });
    }
    if x.len() != path.dim() {
        return Err(GsbmError::InvalidArgument("state dimension mismatch".into()));
    }
    let mut out = vec![0.0; path.dim()];
    conditional_drift_into(path, x, t, sigma, &mut out)?;
    Ok(out)
}

pub(crate) fn conditional_drift_into(path: &GaussianPath, x: &[f64], t: f64, sigma: f64, out: &mut [f64]) -> Result<()> {
    let t = t.clamp(T_CLAMP, 1.0 - T_CLAMP);
    let st = path.mean_stencil(t);
    let d = path.dim();
    let mut mean = vec![0.0; d];
    path.eval_mean_into(&st, &mut mean, out);
    let s = path.eval_std(t);
    let a = gain(s.std, s.dstd, sigma, t)?;
    for i in 0..d {
        out[i] += a * (x[i] - mean[i]);
    }
    Ok(())
}

/// Serializable form of a path (knot times plus knot values).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathRecord {
    pub knot_times: Vec<f64>,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub mean_knots: Vec<f64>,
    pub std_knots: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_ratio: Option<[f64; 2]>,
}

impl From<&GaussianPath> for PathRecord {
    fn from(p: &GaussianPath) -> Self {
        PathRecord {
            knot_times: p.layout.times().to_vec(),
            x0: p.x0.clone(),
            x1: p.x1.clone(),
            mean_knots: p.mean_knots.clone(),
            std_knots: p.std_knots.clone(),
            edge_ratio: Some(p.edge_ratio),
        }
    }
}

impl PathRecord {
    pub fn into_path(self) -> Result<GaussianPath> {
        let mut path = GaussianPath::new(KnotLayout::new(self.knot_times)?, self.x0, self.x1, self.mean_knots, self.std_knots)?;
        if let Some([a, b]) = self.edge_ratio {
            if !(a >= 0.0 && b >= 0.0) {
                return Err(GsbmError::InvalidArgument("edge ratios must be non-negative".into()));
            }
            path.set_edge_ratio(a, b);
        }
        Ok(path)
    }
}
