//! Conditional stochastic optimal control over spline Gaussian paths.
//!
//! For a pinned pair `(x0, x1)` the conditional problem minimizes
//! `∫ E[½‖u_{t|0,1}(X_t) − f(X_t)‖² + V_t(X_t)] dt` over Gaussian paths,
//! where `f` is an optional reference drift. The expectation is estimated
//! from stratified times in `[ε, 1 − ε]` and reparametrized marginal samples
//! `X_t = μ_t + γ_t Z`, and the estimate is averaged over the window (divided
//! by its length). Without a reference drift the kinetic term is evaluated
//! in closed form over `Z`, `½‖∂μ‖² + ½ d (∂γ − σ²/(2γ))²`.

mod objective;
mod precond;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub(crate) use precond::KineticMetric;
pub use objective::{condsoc_objective, condsoc_objective_with, condsoc_value_and_grad, Draws, KnotGradient, ObjectiveTerms};

use crate::batch::StateBatch;
use crate::gaussian_paths::{quadratic_bridge_path, GaussianPath, KnotLayout, T_CLAMP};
use crate::optim::{clip_grad_norm, Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::state_costs::{ReferenceDrift, StateCost};
use crate::{GsbmError, Result};

/// Settings for [`spline_opt`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplineOptConfig {
    /// Gradient steps `M`.
    pub steps: usize,
    /// Marginal samples per time draw.
    pub n_samples: usize,
    /// Stratified time draws per step.
    pub n_time_samples: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Learning rate after the last step relative to the first; the rate
    /// decays geometrically in between.
    pub final_lr_ratio: f64,
    /// Maximum gradient norm; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub eps: f64,
    /// Reuse one set of times and noise for every step.
    pub common_random_numbers: bool,
    /// Optimize the std knots as well as the mean knots.
    pub optimize_std: bool,
    /// Take steps in the kinetic-energy metric of the knots instead of the
    /// Euclidean one.
    pub precondition: bool,
}

impl Default for SplineOptConfig {
    fn default() -> Self {
        SplineOptConfig {
            steps: 1000,
            n_samples: 4,
            n_time_samples: 32,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.05,
            final_lr_ratio: 0.05,
            grad_clip: Some(1e3),
            eps: T_CLAMP,
            common_random_numbers: false,
            optimize_std: true,
            precondition: true,
        }
    }
}

impl SplineOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.n_samples == 0 || self.n_time_samples == 0 {
            return Err(GsbmError::Config(
                "spline optimization needs at least one step, sample and time draw".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.final_lr_ratio > 0.0 && self.final_lr_ratio <= 1.0) {
            return Err(GsbmError::Config(
                "learning rate must be positive and the final ratio in (0, 1]".into(),
            ));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(GsbmError::Config(format!("eps must lie in (0, 0.5), got {}", self.eps)));
        }
        Ok(())
    }
}

/// The pieces of a conditional control problem shared by every pair.
#[derive(Clone, Copy)]
pub struct CondSocProblem<'a> {
    pub cost: &'a dyn StateCost,
    pub base_drift: Option<&'a dyn ReferenceDrift>,
    pub sigma: f64,
}

impl<'a> CondSocProblem<'a> {
    pub fn new(cost: &'a dyn StateCost, sigma: f64) -> Self {
        CondSocProblem {
            cost,
            base_drift: None,
            sigma,
        }
    }

    pub fn with_base_drift(mut self, drift: &'a dyn ReferenceDrift) -> Self {
        self.base_drift = Some(drift);
        self
    }
}

/// Mean knots from warm-start states at the knot times and Brownian-bridge
/// std knots `σ sqrt(t_k(1 − t_k))`.
pub fn init_control_points(layout: &KnotLayout, warm_states: &StateBatch, sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if warm_states.len() != layout.len() {
        return Err(GsbmError::Contract(format!(
            "{} warm states for {} knots",
            warm_states.len(),
            layout.len()
        )));
    }
    let std = layout
        .times()
        .iter()
        .map(|t| sigma * (t * (1.0 - t)).sqrt())
        .collect();
    Ok((warm_states.as_flat().to_vec(), std))
}

/// Result of a spline optimization: the final path and the objective
/// estimate recorded before each step.
#[derive(Debug, Clone)]
pub struct SplineOptOutcome {
    pub path: GaussianPath,
    pub objectives: Vec<f64>,
}

/// Optimizes the path pinned at `(x0, x1)` starting from warm-start states
/// at the knot times.
#[allow(clippy::too_many_arguments)]
pub fn spline_opt(
    layout: &std::sync::Arc<KnotLayout>,
    x0: &[f64],
    x1: &[f64],
    warm_states: &StateBatch,
    problem: &CondSocProblem<'_>,
    cfg: &SplineOptConfig,
    rng: &mut Rng,
) -> Result<SplineOptOutcome> {
    let (mean, std) = init_control_points(layout, warm_states, problem.sigma)?;
    let path = GaussianPath::new(layout.clone(), x0.to_vec(), x1.to_vec(), mean, std)?;
    spline_opt_from(path, problem, cfg, rng)
}

/// Runs the optimization from an arbitrary initial path.
///
/// The std is optimized through the ratio nodes `s_k = γ_k / sqrt(t_k(1−t_k))`,
/// kept above `1e-3·σ`, with the edge ratios held at `σ`.
pub fn spline_opt_from(
    mut path: GaussianPath,
    problem: &CondSocProblem<'_>,
    cfg: &SplineOptConfig,
    rng: &mut Rng,
) -> Result<SplineOptOutcome> {
    cfg.validate()?;
    let dim = path.dim();
    let layout = path.layout().clone();
    let k = layout.len();
    let n_mean = k * dim;
    let fit_std = cfg.optimize_std && problem.sigma > 0.0 && !path.is_deterministic();
    if problem.sigma > 0.0 {
        path.set_edge_ratio(problem.sigma, problem.sigma);
    }
    let metric = if !cfg.precondition {
        None
    } else if cfg.eps == T_CLAMP {
        Some(std::borrow::Cow::Borrowed(layout.kinetic_metric()))
    } else {
        Some(std::borrow::Cow::Owned(KineticMetric::new(&layout, cfg.eps)))
    };
    let profile = layout.profile();
    let s_floor = 1e-3 * problem.sigma;

    let mut params = path.mean_knots().to_vec();
    if fit_std {
        params.extend(path.std_knots().iter().zip(profile).map(|(g, r)| (g / r).max(s_floor)));
    }
    let mut std_knots = path.std_knots().to_vec();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut grad = vec![0.0; params.len()];
    let decay = cfg.final_lr_ratio.powf(1.0 / cfg.steps as f64);
    let mut objectives = Vec::with_capacity(cfg.steps);
    let fixed = cfg
        .common_random_numbers
        .then(|| Draws::sample(cfg, dim, rng));

    for step in 0..cfg.steps {
        let fresh;
        let draws = match &fixed {
            Some(d) => d,
            None => {
                fresh = Draws::sample(cfg, dim, rng);
                &fresh
            }
        };
        let (terms, g) = condsoc_value_and_grad(&path, problem, draws)?;
        if !terms.value.is_finite() {
            return Err(GsbmError::Divergence {
                step,
                objective: terms.value,
            });
        }
        objectives.push(terms.value);

        grad[..n_mean].copy_from_slice(&g.mean);
        if fit_std {
            for i in 0..k {
                grad[n_mean + i] = g.std[i] * profile[i];
            }
        }
        if let Some(m) = &metric {
            m.apply_mean(&mut grad[..n_mean], dim);
            if fit_std {
                m.apply_ratio(&mut grad[n_mean..], dim);
            }
        }
        if let Some(c) = cfg.grad_clip {
            clip_grad_norm(&mut grad, c);
        }
        opt.step(&mut params, &grad);
        opt.set_lr(opt.lr() * decay);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(GsbmError::Divergence {
                step,
                objective: f64::NAN,
            });
        }
        if fit_std {
            for i in 0..k {
                let s = &mut params[n_mean + i];
                *s = s.max(s_floor);
                std_knots[i] = *s * profile[i];
            }
        }
        path.set_knots(&params[..n_mean], &std_knots);
    }
    Ok(SplineOptOutcome { path, objectives })
}

/// `path` with its mean pushed sideways by `amplitude·‖x1 − x0‖·sin(πt)`
/// along a fixed direction perpendicular to `x1 − x0`.
pub fn detour_path(path: &GaussianPath, amplitude: f64) -> Result<GaussianPath> {
    let d = path.dim();
    let (x0, x1) = (path.x0(), path.x1());
    let delta: Vec<f64> = x1.iter().zip(x0).map(|(a, b)| a - b).collect();
    let len = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut perp = vec![0.0; d];
    if d == 1 {
        return Err(GsbmError::InvalidArgument("no sideways direction in one dimension".into()));
    } else if len == 0.0 {
        perp[1] = 1.0;
    } else if d == 2 {
        perp = vec![-delta[1] / len, delta[0] / len];
    } else {
        let j = (0..d)
            .min_by(|&a, &b| delta[a].abs().total_cmp(&delta[b].abs()))
            .unwrap_or(0);
        perp[j] = 1.0;
        let proj = delta[j] / len;
        for (p, v) in perp.iter_mut().zip(&delta) {
            *p -= proj * v / len;
        }
        let n = perp.iter().map(|v| v * v).sum::<f64>().sqrt();
        perp.iter_mut().for_each(|p| *p /= n);
    }
    let scale = amplitude * len.max(1.0);
    let mut mean = path.mean_knots().to_vec();
    for (k, t) in path.layout().times().iter().enumerate() {
        let bump = scale * (std::f64::consts::PI * t).sin();
        for c in 0..d {
            mean[k * d + c] += bump * perp[c];
        }
    }
    let mut out = path.clone();
    out.set_knots(&mean, path.std_knots());
    Ok(out)
}

/// Optimizes every starting path and keeps the one whose final objective,
/// re-estimated on shared draws, is lowest.
pub fn spline_opt_best(
    starts: Vec<GaussianPath>,
    problem: &CondSocProblem<'_>,
    cfg: &SplineOptConfig,
    rng: &mut Rng,
) -> Result<SplineOptOutcome> {
    if starts.is_empty() {
        return Err(GsbmError::InvalidArgument("no starting paths".into()));
    }
    if starts.len() == 1 {
        let start = starts.into_iter().next().expect("one start");
        return spline_opt_from(start, problem, cfg, rng);
    }
    let judge = SplineOptConfig {
        n_time_samples: 4 * cfg.n_time_samples,
        ..cfg.clone()
    };
    let draws = Draws::sample(&judge, starts[0].dim(), rng);
    let mut best: Option<(f64, SplineOptOutcome)> = None;
    for start in starts {
        let outcome = spline_opt_from(start, problem, cfg, rng)?;
        let value = condsoc_objective_with(&outcome.path, problem, &draws)?;
        if best.as_ref().map_or(true, |(b, _)| value < *b) {
            best = Some((value, outcome));
        }
    }
    Ok(best.expect("at least one start").1)
}

/// The closed-form solution for `V(x) = α‖σx‖²` represented on `layout`.
pub fn solve_quadratic(layout: std::sync::Arc<KnotLayout>, x0: &[f64], x1: &[f64], alpha: f64, sigma: f64) -> Result<GaussianPath> {
    quadratic_bridge_path(layout, x0, x1, alpha, sigma)
}

fn stratified_times(n: usize, eps: f64, rng: &mut Rng) -> Vec<f64> {
    let width = (1.0 - 2.0 * eps) / n as f64;
    (0..n)
        .map(|j| eps + width * (j as f64 + rng.gen::<f64>()))
        .collect()
}

fn standard_normals(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[cfg(test)]
mod tests;
