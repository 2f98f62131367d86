use super::{standard_normals, stratified_times, CondSocProblem, SplineOptConfig};
use crate::gaussian_paths::GaussianPath;
use crate::rng::Rng;
use crate::{GsbmError, Result};

/// Times and standard-normal noise for one objective estimate.
#[derive(Debug, Clone)]
pub struct Draws {
    pub times: Vec<f64>,
    /// `times.len() × n_samples × dim`, row-major.
    pub noise: Vec<f64>,
    pub n_samples: usize,
}

impl Draws {
    pub fn sample(cfg: &SplineOptConfig, dim: usize, rng: &mut Rng) -> Self {
        let times = stratified_times(cfg.n_time_samples, cfg.eps, rng);
        let noise = standard_normals(cfg.n_time_samples * cfg.n_samples * dim, rng);
        Draws {
            times,
            noise,
            n_samples: cfg.n_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub value: f64,
    pub kinetic: f64,
    pub potential: f64,
}

/// Gradient with respect to the mean knots (`K × d`) and std knots (`K`).
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGradient {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Monte Carlo estimate of the conditional control objective.
pub fn condsoc_objective(path: &GaussianPath, problem: &CondSocProblem<'_>, cfg: &SplineOptConfig, rng: &mut Rng) -> Result<f64> {
    let draws = Draws::sample(cfg, path.dim(), rng);
    evaluate(path, problem, &draws, false).map(|(t, _)| t.value)
}

/// Objective estimate for fixed draws.
pub fn condsoc_objective_with(path: &GaussianPath, problem: &CondSocProblem<'_>, draws: &Draws) -> Result<f64> {
    evaluate(path, problem, draws, false).map(|(t, _)| t.value)
}

/// Objective estimate for fixed draws and its exact gradient.
pub fn condsoc_value_and_grad(path: &GaussianPath, problem: &CondSocProblem<'_>, draws: &Draws) -> Result<(ObjectiveTerms, KnotGradient)> {
    let (terms, grad) = evaluate(path, problem, draws, true)?;
    Ok((terms, grad.expect("gradient requested")))
}

fn evaluate(
    path: &GaussianPath,
    problem: &CondSocProblem<'_>,
    draws: &Draws,
    want_grad: bool,
) -> Result<(ObjectiveTerms, Option<KnotGradient>)> {
    let d = path.dim();
    let layout = path.layout().clone();
    let k = layout.len();
    let sigma = problem.sigma;
    let s2 = sigma * sigma;
    let n_t = draws.times.len();
    let n_s = draws.n_samples;
    let w_t = 1.0 / n_t as f64;
    let w = w_t / n_s as f64;

    let mut g_nodes = vec![0.0; (k + 2) * d];
    let mut g_m2 = vec![0.0; (k + 2) * d];
    let mut g_ratio = vec![0.0; k + 2];
    let mut g_ratio_m2 = vec![0.0; k + 2];

    let mut mean = vec![0.0; d];
    let mut dmean = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut gv = vec![0.0; d];
    let mut f = vec![0.0; d];
    let mut jte = vec![0.0; d];
    let mut e = vec![0.0; d];
    let mut g_mu = vec![0.0; d];
    let mut g_dmu = vec![0.0; d];

    let mut kinetic = 0.0;
    let mut potential = 0.0;

    for (j, &t) in draws.times.iter().enumerate() {
        let st = path.mean_stencil(t);
        path.eval_mean_into(&st, &mut mean, &mut dmean);
        let se = path.eval_std(t);
        let gamma = se.std;
        let c = if gamma == 0.0 {
            if sigma > 0.0 {
                return Err(GsbmError::Singularity { t, sigma });
            }
            0.0
        } else {
            se.dstd - s2 / (2.0 * gamma)
        };
        g_mu.fill(0.0);
        g_dmu.fill(0.0);
        // gradient with respect to c = γ' − σ²/(2γ) and γ
        let mut g_c = 0.0;
        let mut g_gamma = 0.0;

        if problem.base_drift.is_none() {
            let dm2: f64 = dmean.iter().map(|v| v * v).sum();
            kinetic += w_t * 0.5 * (dm2 + d as f64 * c * c);
            if want_grad {
                for (g, v) in g_dmu.iter_mut().zip(&dmean) {
                    *g += w_t * v;
                }
                g_c += w_t * d as f64 * c;
            }
        }

        for i in 0..n_s {
            let z = &draws.noise[(j * n_s + i) * d..(j * n_s + i + 1) * d];
            for q in 0..d {
                x[q] = mean[q] + gamma * z[q];
            }
            let v = problem.cost.eval(t, &x, want_grad.then_some(&mut gv[..]));
            if !v.is_finite() {
                return Err(GsbmError::NonFiniteCost { t, x: x.clone(), value: v });
            }
            potential += w * v;
            if want_grad {
                for q in 0..d {
                    g_mu[q] += w * gv[q];
                    g_gamma += w * gv[q] * z[q];
                }
            }
            if let Some(drift) = problem.base_drift {
                drift.drift(t, &x, &mut f);
                for q in 0..d {
                    e[q] = dmean[q] + c * z[q] - f[q];
                }
                kinetic += w * 0.5 * e.iter().map(|v| v * v).sum::<f64>();
                if want_grad {
                    jte.fill(0.0);
                    drift.vjp(t, &x, &e, &mut jte);
                    for q in 0..d {
                        g_dmu[q] += w * e[q];
                        g_c += w * e[q] * z[q];
                        g_mu[q] -= w * jte[q];
                        g_gamma -= w * jte[q] * z[q];
                    }
                }
            }
        }

        if !want_grad {
            continue;
        }
        layout
            .mean_basis()
            .backprop(&st, &g_mu, &g_dmu, d, &mut g_nodes, &mut g_m2);
        if !se.frozen {
            g_gamma += g_c * s2 / (2.0 * gamma * gamma);
            let g_dgamma = g_c;
            // γ = r s, γ' = r' s + r s'
            let g_s = g_gamma * se.r + g_dgamma * se.dr;
            let g_ds = g_dgamma * se.r;
            layout
                .ratio_basis()
                .backprop(&se.stencil, &[g_s], &[g_ds], 1, &mut g_ratio, &mut g_ratio_m2);
        }
    }

    let terms = ObjectiveTerms {
        value: kinetic + potential,
        kinetic,
        potential,
    };
    if !want_grad {
        return Ok((terms, None));
    }
    layout.mean_basis().pull_back_second_derivatives(&g_m2, d, &mut g_nodes);
    layout.ratio_basis().pull_back_second_derivatives(&g_ratio_m2, 1, &mut g_ratio);
    let mean_grad = g_nodes[d..(k + 1) * d].to_vec();
    let std_grad = g_ratio[1..=k]
        .iter()
        .zip(layout.profile())
        .map(|(g, r)| g / r)
        .collect();
    Ok((
        terms,
        Some(KnotGradient {
            mean: mean_grad,
            std: std_grad,
        }),
    ))
}
