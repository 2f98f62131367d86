use std::sync::Arc;

use super::*;
use crate::gaussian_paths::{brownian_bridge_on, quadratic_bridge_coeffs};
use crate::numerics::adaptive_simpson;
use crate::rng::rng_from_seed;
use crate::state_costs::{ConstantCost, QuadraticCost, ShiftedCost, ZeroCost};

fn sup_errors(path: &GaussianPath, mean: impl Fn(f64) -> Vec<f64>, std: impl Fn(f64) -> f64) -> (f64, f64) {
    let (mut em, mut es): (f64, f64) = (0.0, 0.0);
    for i in 0..=400 {
        let t = i as f64 / 400.0;
        let p = path.eval(t).unwrap();
        for (a, b) in p.mean.iter().zip(mean(t)) {
            em = em.max((a - b).abs());
        }
        es = es.max((p.std - std(t)).abs());
    }
    (em, es)
}

fn perturbed(layout: &Arc<KnotLayout>, x0: &[f64], x1: &[f64], sigma: f64) -> GaussianPath {
    let base = brownian_bridge_on(layout.clone(), x0, x1, sigma).unwrap();
    let d = x0.len();
    let mean: Vec<f64> = base
        .mean_knots()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let t = layout.times()[i / d];
            m + 0.4 * (std::f64::consts::PI * t).sin() * if i % d == 0 { 1.0 } else { -1.0 }
        })
        .collect();
    let std = base.std_knots().iter().map(|g| g * 1.4).collect();
    GaussianPath::new(layout.clone(), x0.to_vec(), x1.to_vec(), mean, std).unwrap()
}

fn quad_oracle(f: impl Fn(f64) -> f64, eps: f64) -> f64 {
    adaptive_simpson(&f, eps, 1.0 - eps, 1e-12) / (1.0 - 2.0 * eps)
}

#[test]
fn straight_line_kinetic_energy_is_exact() {
    let layout = KnotLayout::uniform(30);
    let (x0, x1) = (vec![-1.0, 2.0, 0.5], vec![3.0, 0.0, 0.5]);
    let path = brownian_bridge_on(layout, &x0, &x1, 0.0).unwrap();
    assert!(path.is_deterministic());
    let zero = ZeroCost;
    let problem = CondSocProblem::new(&zero, 0.0);
    let v = condsoc_objective(&path, &problem, &SplineOptConfig::default(), &mut rng_from_seed(0)).unwrap();
    assert!((v - 0.5 * 20.0).abs() < 1e-10, "{v}");
}

#[test]
fn constant_cost_adds_exactly() {
    let layout = KnotLayout::uniform(12);
    let path = perturbed(&layout, &[0.0, 0.0], &[1.0, -1.0], 1.0);
    let cfg = SplineOptConfig::default();
    let zero = ZeroCost;
    let konst = ConstantCost(2.5);
    let a = condsoc_objective(&path, &CondSocProblem::new(&zero, 1.0), &cfg, &mut rng_from_seed(5)).unwrap();
    let b = condsoc_objective(&path, &CondSocProblem::new(&konst, 1.0), &cfg, &mut rng_from_seed(5)).unwrap();
    assert!((b - a - 2.5).abs() < 1e-12);
}

#[test]
fn brownian_bridge_objective_matches_quadrature() {
    let layout = KnotLayout::uniform(30);
    let path = brownian_bridge_on(layout, &[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
    let zero = ZeroCost;
    let cfg = SplineOptConfig { n_time_samples: 20_000, n_samples: 1, ..Default::default() };
    let eps = cfg.eps;
    // E ½‖u‖² = ½(‖∂μ‖² + a² γ² d) with a γ = −t/γ for the bridge
    let oracle = quad_oracle(|t| 0.5 * (1.0 + 2.0 * t * t / (t * (1.0 - t))), eps);
    let v = condsoc_objective(&path, &CondSocProblem::new(&zero, 1.0), &cfg, &mut rng_from_seed(1)).unwrap();
    assert!((v - oracle).abs() < 0.01 * oracle, "{v} vs {oracle}");
}

#[test]
fn gradient_matches_finite_differences() {
    use crate::state_costs::{MeanPolarizeDrift, MixtureDensity, Population, PopulationSnapshot, SumCost};
    let layout = KnotLayout::uniform(8);
    let (x0, x1) = (vec![0.3, -0.2, 0.5], vec![1.0, 0.4, -0.6]);
    let path = perturbed(&layout, &x0, &x1, 0.8);
    let samples = StateBatch::from_rows(&[vec![0.5, 0.1, 0.0], vec![-0.3, 0.7, 0.2], vec![0.9, -0.4, 0.3]]);
    let density = MixtureDensity::kde(samples.clone(), 0.8).unwrap();
    let pop = Arc::new(Population::new(vec![0.0], vec![PopulationSnapshot { density, samples }]).unwrap());
    let cost = SumCost::new()
        .with(Arc::new(QuadraticCost { alpha: 0.7, sigma: 0.8 }))
        .with(Arc::new(crate::state_costs::MeanFieldCost {
            interaction: crate::state_costs::Interaction::Congestion,
            lambda: 2.0,
            population: pop.clone(),
        }));
    let drift = MeanPolarizeDrift { population: pop };
    let cfg = SplineOptConfig { n_time_samples: 16, ..Default::default() };
    let draws = Draws::sample(&cfg, 3, &mut rng_from_seed(7));
    let mut rng = rng_from_seed(8);
    for with_drift in [false, true] {
        let mut problem = CondSocProblem::new(&cost, 0.8);
        if with_drift {
            problem = problem.with_base_drift(&drift);
        }
        let (_, g) = condsoc_value_and_grad(&path, &problem, &draws).unwrap();
        let value_at = |mean: &[f64], std: &[f64]| {
            let mut p = path.clone();
            p.set_knots(mean, std);
            condsoc_value_and_grad(&p, &problem, &draws).unwrap().0.value
        };
        for _ in 0..10 {
            use rand::Rng as _;
            let dm: Vec<f64> = (0..g.mean.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ds: Vec<f64> = (0..g.std.len()).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let h = 1e-5;
            let shift = |s: f64| -> (Vec<f64>, Vec<f64>) {
                (
                    path.mean_knots().iter().zip(&dm).map(|(a, b)| a + s * b).collect(),
                    path.std_knots().iter().zip(&ds).map(|(a, b)| a + s * b).collect(),
                )
            };
            let (mp, sp) = shift(h);
            let (mm, sm) = shift(-h);
            let fd = (value_at(&mp, &sp) - value_at(&mm, &sm)) / (2.0 * h);
            let an: f64 = g.mean.iter().zip(&dm).map(|(a, b)| a * b).sum::<f64>()
                + g.std.iter().zip(&ds).map(|(a, b)| a * b).sum::<f64>();
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-3), "drift={with_drift}: fd {fd} vs {an}");
        }
    }
}

#[test]
fn init_control_points_examples() {
    let layout = KnotLayout::new(vec![0.25, 0.5, 0.75]).unwrap();
    let warm = StateBatch::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
    let (m, s) = init_control_points(&layout, &warm, 0.0).unwrap();
    assert_eq!(m, vec![1.0, 2.0, 3.0]);
    assert_eq!(s, vec![0.0; 3]);
    let (_, s) = init_control_points(&layout, &warm, 2.0).unwrap();
    assert!((s[1] - 1.0).abs() < 1e-15);
    assert!(init_control_points(&layout, &StateBatch::from_rows(&[vec![1.0]]), 1.0).is_err());

    // warm states on a straight line give the Brownian bridge
    let layout = KnotLayout::uniform(10);
    let rows: Vec<Vec<f64>> = layout.times().iter().map(|t| vec![2.0 * t, -t]).collect();
    let (m, s) = init_control_points(&layout, &StateBatch::from_rows(&rows), 1.0).unwrap();
    let mut p = GaussianPath::new(layout.clone(), vec![0.0, 0.0], vec![2.0, -1.0], m, s).unwrap();
    p.set_edge_ratio(1.0, 1.0);
    let (em, es) = sup_errors(&p, |t| vec![2.0 * t, -t], |t| (t * (1.0 - t)).sqrt());
    assert!(em < 1e-12 && es < 1e-12);
}

#[test]
fn converges_to_brownian_bridge() {
    let layout = KnotLayout::uniform(30);
    let (x0, x1) = (vec![0.0, 0.0], vec![1.0, 0.0]);
    let zero = ZeroCost;
    let problem = CondSocProblem::new(&zero, 1.0);
    let cfg = SplineOptConfig::default();
    let out = spline_opt_from(perturbed(&layout, &x0, &x1, 1.0), &problem, &cfg, &mut rng_from_seed(1)).unwrap();
    assert_eq!(out.objectives.len(), cfg.steps);
    let (em, es) = sup_errors(&out.path, |t| vec![t, 0.0], |t| (t * (1.0 - t)).sqrt());
    assert!(em < 1e-2 && es < 2e-2, "mean {em} std {es}");
    // pins survive every update
    let p0 = out.path.eval(0.0).unwrap();
    let p1 = out.path.eval(1.0).unwrap();
    assert_eq!((p0.mean, p0.std), (x0, 0.0));
    assert_eq!((p1.mean, p1.std), (x1, 0.0));
}

#[test]
fn converges_to_quadratic_closed_form() {
    let layout = KnotLayout::uniform(30);
    let (alpha, sigma) = (0.5, 1.0);
    let (x0, x1) = (vec![-1.0, 0.5], vec![1.5, -0.5]);
    let cost = QuadraticCost { alpha, sigma };
    let problem = CondSocProblem::new(&cost, sigma);
    let cfg = SplineOptConfig::default();
    let start = brownian_bridge_on(layout.clone(), &x0, &x1, sigma).unwrap();
    let out = spline_opt_from(start, &problem, &cfg, &mut rng_from_seed(2)).unwrap();
    let q = |t: f64| quadratic_bridge_coeffs(t, alpha, sigma).unwrap();
    let (em, es) = sup_errors(
        &out.path,
        |t| {
            let c = q(t);
            x0.iter().zip(&x1).map(|(a, b)| c.c * a + c.e * b).collect()
        },
        |t| q(t).gamma,
    );
    assert!(em < 1e-2 && es < 1e-2, "mean {em} std {es}");
    let tk = layout.times()[14];
    let exact = solve_quadratic(layout, &x0, &x1, alpha, sigma).unwrap();
    assert!((exact.eval(tk).unwrap().std - q(tk).gamma).abs() < 1e-12);
}

#[test]
fn coincident_endpoints_without_noise_are_stationary() {
    let layout = KnotLayout::uniform(10);
    let x = vec![0.7, -0.3];
    let zero = ZeroCost;
    let out = spline_opt(
        &layout,
        &x,
        &x,
        &StateBatch::from_rows(&vec![x.clone(); 10]),
        &CondSocProblem::new(&zero, 0.0),
        &SplineOptConfig { steps: 20, ..Default::default() },
        &mut rng_from_seed(3),
    )
    .unwrap();
    assert!(out.objectives.iter().all(|v| v.abs() < 1e-20));
    for t in [0.0, 0.3, 0.9, 1.0] {
        assert_eq!(out.path.eval(t).unwrap().mean, x);
    }
}

#[test]
fn descent_with_common_random_numbers() {
    let layout = KnotLayout::uniform(30);
    let cost = QuadraticCost { alpha: 0.5, sigma: 1.0 };
    let problem = CondSocProblem::new(&cost, 1.0);
    let cfg = SplineOptConfig { steps: 200, common_random_numbers: true, ..Default::default() };
    let out = spline_opt_from(perturbed(&layout, &[-1.0, 0.0], &[1.0, 0.0], 1.0), &problem, &cfg, &mut rng_from_seed(4)).unwrap();
    let obj = &out.objectives;
    assert!(obj.last().unwrap() < &obj[0]);
    let increases = obj.windows(2).filter(|w| w[1] > w[0] + 1e-9).count();
    assert!(increases == 0, "{increases} increases");
}

#[test]
fn constant_shift_leaves_optimum_unchanged() {
    let layout = KnotLayout::uniform(10);
    let q = QuadraticCost { alpha: 0.3, sigma: 1.0 };
    let shifted = ShiftedCost { inner: q, shift: 7.0 };
    let cfg = SplineOptConfig { steps: 50, ..Default::default() };
    let start = perturbed(&layout, &[0.0, 0.0], &[1.0, 1.0], 1.0);
    let a = spline_opt_from(start.clone(), &CondSocProblem::new(&q, 1.0), &cfg, &mut rng_from_seed(6)).unwrap();
    let b = spline_opt_from(start, &CondSocProblem::new(&shifted, 1.0), &cfg, &mut rng_from_seed(6)).unwrap();
    for (x, y) in a.path.mean_knots().iter().zip(b.path.mean_knots()) {
        assert!((x - y).abs() < 1e-12);
    }
    for (x, y) in a.path.std_knots().iter().zip(b.path.std_knots()) {
        assert!((x - y).abs() < 1e-12);
    }
    for (x, y) in a.objectives.iter().zip(&b.objectives) {
        assert!((y - x - 7.0).abs() < 1e-9);
    }
}

#[test]
fn divergence_is_reported() {
    struct Explode;
    impl StateCost for Explode {
        fn eval(&self, _t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
            if let Some(g) = grad {
                g.iter_mut().for_each(|v| *v = 1e300);
            }
            if x[0] > 10.0 { f64::INFINITY } else { 0.0 }
        }
    }
    let layout = KnotLayout::uniform(5);
    let cfg = SplineOptConfig { steps: 50, grad_clip: None, learning_rate: 1.0, ..Default::default() };
    let start = brownian_bridge_on(layout, &[0.0], &[0.0], 0.0).unwrap();
    let err = spline_opt_from(start, &CondSocProblem::new(&Explode, 0.0), &cfg, &mut rng_from_seed(0)).unwrap_err();
    assert!(matches!(err, GsbmError::Divergence { .. } | GsbmError::NonFiniteCost { .. }), "{err}");
}
