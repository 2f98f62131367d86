//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria are selected with `GSBM_ACCEPTANCE_ONLY=5,6` (default: all).
//! A failing criterion is reported but only makes the process exit non-zero
//! when `GSBM_ACCEPTANCE_STRICT` is set.
//! Training criteria take tens of minutes on one core. Run with
//! `cargo test -p gsbm-core --test acceptance -- --nocapture`; the test
//! profile is optimized.

use std::cell::OnceCell;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng as _;

use gsbm::batch::StateBatch;
use gsbm::condsoc::{spline_opt_from, CondSocProblem, SplineOptConfig};
use gsbm::driver::{
    corridor_fraction, directional_similarity, gsbm_run, simulate_sde, EpochMetrics, Mode, PolarizeBase, RunConfig,
    RunResult,
};
use gsbm::gaussian_paths::{
    brownian_bridge, brownian_bridge_on, path_covariance, quadratic_bridge_coeffs, sample_trajectory_joint, GaussianPath,
    KnotLayout, TimeGrid,
};
use gsbm::matching::{
    explicit_loss, explicit_loss_and_grad, implicit_loss, implicit_loss_and_grad, Direction, DriftField, FieldKind,
    ImplicitBatch, Laplacian, MatchBatch, MatchOptions,
};
use gsbm::path_integral::{impt_sample, path_log_weight, WeightedBatch};
use gsbm::rng::{rng_from_seed, SeedPath};
use gsbm::state_costs::{
    LidarCost, MixtureDensity, Population, PopulationSnapshot, QuadraticCost, StateCost, ZeroCost,
};
use gsbm::tasks::{make_task, TaskName, TaskOverrides};

/// Relative error allowed between analytic and central-difference gradients.
const FD_TOLERANCE: f64 = 1e-4;
const FD_PROBES: usize = 20;
/// Stunnel objective at full scale that criterion 6 compares against.
const STUNNEL_REFERENCE_OBJECTIVE: f64 = 460.88;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

/// The Stunnel configuration used by criteria 5, 6 and 7.
fn stunnel_desk(seed: u64, mode: Mode) -> RunConfig {
    RunConfig {
        task: TaskName::Stunnel,
        sigma: Some(1.0),
        epochs: 20,
        pairs: Some(2048),
        population_size: 128,
        mode,
        seed,
        matching: MatchOptions {
            steps: 500,
            ..Default::default()
        },
        task_overrides: TaskOverrides {
            spline_steps: Some(50),
            n_steps: Some(200),
            hidden: Some(64),
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Stunnel at σ = 0.5 for the resampling comparison.
fn stunnel_low_noise(seed: u64, pi_resample: bool) -> RunConfig {
    RunConfig {
        sigma: Some(0.5),
        epochs: 6,
        pairs: Some(512),
        pi_resample,
        ..stunnel_desk(seed, Mode::Gsbm)
    }
}

fn spider_desk(sigma: f64) -> RunConfig {
    RunConfig {
        task: TaskName::Spider,
        sigma: Some(sigma),
        epochs: 4,
        pairs: Some(512),
        population_size: 128,
        matching: MatchOptions {
            steps: 1000,
            ..Default::default()
        },
        task_overrides: TaskOverrides {
            n_steps: Some(200),
            hidden: Some(64),
            ..Default::default()
        },
        ..Default::default()
    }
}

fn opinion_desk() -> RunConfig {
    RunConfig {
        task: TaskName::Opinion,
        epochs: 4,
        pairs: Some(256),
        population_size: 64,
        matching: MatchOptions {
            steps: 1000,
            ..Default::default()
        },
        task_overrides: TaskOverrides {
            spline_steps: Some(100),
            n_steps: Some(150),
            hidden: Some(128),
            ..Default::default()
        },
        ..Default::default()
    }
}

struct TimedRun {
    result: RunResult,
    elapsed: Duration,
}

fn timed(cfg: &RunConfig) -> TimedRun {
    let clock = Instant::now();
    let result = gsbm_run(cfg, None).unwrap_or_else(|e| panic!("run {:?} seed {} failed: {e}", cfg.task, cfg.seed));
    let elapsed = clock.elapsed();
    eprintln!(
        "  [{} seed {} {:?}] {:.1} min, final W2 {:.4}, objective {:.2}",
        cfg.task,
        cfg.seed,
        cfg.mode,
        elapsed.as_secs_f64() / 60.0,
        result.metrics.last().unwrap().w2,
        result.metrics.last().unwrap().objective
    );
    TimedRun { result, elapsed }
}

/// Stunnel runs shared between criteria.
#[derive(Default)]
struct Shared {
    gsbm: [OnceCell<TimedRun>; 3],
    dsbm: OnceCell<TimedRun>,
}

impl Shared {
    fn gsbm(&self, seed: usize) -> &TimedRun {
        self.gsbm[seed].get_or_init(|| timed(&stunnel_desk(seed as u64, Mode::Gsbm)))
    }

    fn dsbm(&self) -> &TimedRun {
        self.dsbm.get_or_init(|| timed(&stunnel_desk(0, Mode::Dsbm)))
    }
}

fn quadratic_limits(_: &Shared) -> Outcome {
    let clock = Instant::now();
    let (eta, sigma) = (1e-4f64, 1.0f64);
    let alpha = eta * eta / (2.0 * sigma * sigma);
    let mut worst: f64 = 0.0;
    for i in 1..=9 {
        let t = i as f64 / 10.0;
        let q = quadratic_bridge_coeffs(t, alpha, sigma).unwrap();
        worst = worst
            .max((q.c - (1.0 - t)).abs())
            .max((q.e - t).abs())
            .max((q.gamma - sigma * (t * (1.0 - t)).sqrt()).abs());
    }
    let elapsed = clock.elapsed();
    Outcome::new(
        worst < 1e-6 && within(elapsed, 1.0),
        format!("max deviation {worst:.2e} < 1e-6, {:.3} s < 1 s", elapsed.as_secs_f64()),
    )
}

fn covariance_sampler(_: &Shared) -> Outcome {
    let clock = Instant::now();
    let sigma = 1.0;
    let n = 10_000;
    let path = brownian_bridge(&[0.0], &[0.0], sigma, 30).unwrap();
    let grid = Arc::new(TimeGrid::uniform(20));
    let mut rng = rng_from_seed(21);
    let trajs = sample_trajectory_joint(&path, sigma, &grid, n, &mut rng).unwrap();
    let steps = grid.n_steps();

    let mut failures = Vec::new();
    let mut worst_z: f64 = 0.0;
    for _ in 0..10 {
        let i = rng.gen_range(1..steps);
        let j = rng.gen_range(i..steps);
        let (s, t) = (grid.times()[i], grid.times()[j]);
        let xs: Vec<f64> = trajs.iter().map(|tr| tr.states.row(i)[0]).collect();
        let xt: Vec<f64> = trajs.iter().map(|tr| tr.states.row(j)[0]).collect();
        let ms = xs.iter().sum::<f64>() / n as f64;
        let mt = xt.iter().sum::<f64>() / n as f64;
        let prods: Vec<f64> = xs.iter().zip(&xt).map(|(a, b)| (a - ms) * (b - mt)).collect();
        let cov = prods.iter().sum::<f64>() / (n - 1) as f64;
        let var = prods.iter().map(|p| (p - cov).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let want = sigma * sigma * s * (1.0 - t);
        let z = (cov - want).abs() / se;
        worst_z = worst_z.max(z);
        if z > 3.0 {
            failures.push(format!("({s:.2},{t:.2}): {cov:.4} vs {want:.4}"));
        }
    }

    let times: Vec<f64> = grid.times()[1..steps].to_vec();
    let analytic = path_covariance(&path, sigma, &times).unwrap();
    let mut worst_exact: f64 = 0.0;
    for (a, &s) in times.iter().enumerate() {
        for (b, &t) in times.iter().enumerate() {
            let want = sigma * sigma * s.min(t) * (1.0 - s.max(t));
            worst_exact = worst_exact.max((analytic[(a, b)] - want).abs());
        }
    }
    let elapsed = clock.elapsed();
    Outcome::new(
        failures.is_empty() && worst_exact < 1e-10 && within(elapsed, 30.0),
        format!(
            "largest |z| {worst_z:.2} <= 3 over 10 pairs{}, analytic error {worst_exact:.1e} < 1e-10, {:.1} s < 30 s",
            if failures.is_empty() { String::new() } else { format!(" (failed: {})", failures.join("; ")) },
            elapsed.as_secs_f64()
        ),
    )
}

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

/// A bridge with its mean bent sideways and its std inflated by 40%.
fn perturbed(layout: &Arc<KnotLayout>, x0: &[f64], x1: &[f64], sigma: f64) -> GaussianPath {
    let base = brownian_bridge_on(layout.clone(), x0, x1, sigma).unwrap();
    let d = x0.len();
    let mean = base
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

fn spline_opt_oracles(_: &Shared) -> Outcome {
    let clock = Instant::now();
    let layout = KnotLayout::uniform(30);
    let (alpha, sigma) = (0.5, 1.0);
    let (x0, x1) = (vec![-1.0, 0.5], vec![1.5, -0.5]);
    let cfg = SplineOptConfig {
        steps: 1000,
        ..Default::default()
    };

    let cost = QuadraticCost { alpha, sigma };
    let out = spline_opt_from(
        perturbed(&layout, &x0, &x1, sigma),
        &CondSocProblem::new(&cost, sigma),
        &cfg,
        &mut rng_from_seed(31),
    )
    .unwrap();
    let q = |t: f64| quadratic_bridge_coeffs(t, alpha, sigma).unwrap();
    let (qm, qs) = sup_errors(
        &out.path,
        |t| {
            let c = q(t);
            x0.iter().zip(&x1).map(|(a, b)| c.c * a + c.e * b).collect()
        },
        |t| q(t).gamma,
    );

    let zero = ZeroCost;
    let out = spline_opt_from(
        perturbed(&layout, &x0, &x1, sigma),
        &CondSocProblem::new(&zero, sigma),
        &cfg,
        &mut rng_from_seed(32),
    )
    .unwrap();
    let (bm, bs) = sup_errors(
        &out.path,
        |t| x0.iter().zip(&x1).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
        |t| sigma * (t * (1.0 - t)).sqrt(),
    );
    let elapsed = clock.elapsed();
    let worst = qm.max(qs).max(bm).max(bs);
    Outcome::new(
        worst < 1e-2 && within(elapsed, 120.0),
        format!(
            "quadratic mean {qm:.1e} std {qs:.1e}, bridge mean {bm:.1e} std {bs:.1e} (all < 1e-2), {:.1} s < 120 s",
            elapsed.as_secs_f64()
        ),
    )
}

fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-3)
}

/// Worst coordinate-wise relative error of `grad` against central
/// differences of `f` at `x`.
fn fd_error(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], h: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        worst = worst.max(relative_error((fp - fm) / (2.0 * h), grad[i]));
    }
    worst
}

fn gradient_suite(_: &Shared) -> Outcome {
    let clock = Instant::now();
    let mut rng = rng_from_seed(41);
    let mut report = Vec::new();
    let mut pass = true;
    let mut record = |name: String, worst: f64| {
        pass &= worst < FD_TOLERANCE;
        report.push(format!("{name} {worst:.1e}"));
    };

    for name in [TaskName::Stunnel, TaskName::Vneck, TaskName::Gmm, TaskName::Spider, TaskName::Opinion] {
        let task = make_task(name, &TaskOverrides::default()).unwrap();
        let samples = task.source.sample(64, &mut rng);
        let density = MixtureDensity::kde(samples.clone(), MixtureDensity::scott_bandwidth(&samples)).unwrap();
        let pop = Arc::new(Population::new(vec![0.0], vec![PopulationSnapshot { density, samples }]).unwrap());
        let cost = task.state_cost(Some(&pop));
        let a = task.source.sample(FD_PROBES, &mut rng);
        let b = task.target.sample(FD_PROBES, &mut rng);
        let mut worst: f64 = 0.0;
        for k in 0..FD_PROBES {
            let s: f64 = rng.gen_range(0.0..1.0);
            let x: Vec<f64> = a
                .row(k)
                .iter()
                .zip(b.row(k))
                .map(|(u, v)| (1.0 - s) * u + s * v + rng.gen_range(-1.0..1.0))
                .collect();
            let mut g = vec![0.0; x.len()];
            cost.eval(0.0, &x, Some(&mut g));
            worst = worst.max(fd_error(|y| cost.value(0.0, y), &x, &g, 1e-5));
        }
        record(name.to_string(), worst);
    }

    let lidar = make_task(TaskName::Lidar, &TaskOverrides::default()).unwrap();
    let cost = LidarCost::new(lidar.lidar.clone().unwrap(), lidar.lidar_lambda);
    let mut worst: f64 = 0.0;
    for _ in 0..FD_PROBES {
        let (px, py) = (rng.gen_range(-5.5..5.5), rng.gen_range(-5.5..5.5));
        let base = [px, py, 0.0];
        let plane = cost.plane_at(&base);
        let x = [px, py, plane.a * px + plane.b * py + plane.c + rng.gen_range(-0.3..0.3)];
        let mut g = [0.0; 3];
        cost.eval_with_plane(&x, &plane, Some(&mut g));
        worst = worst.max(fd_error(|y| cost.eval_with_plane(y, &plane, None).0, &x, &g, 1e-6));
    }
    record("lidar".into(), worst);

    let quad = QuadraticCost { alpha: 0.5, sigma: 1.0 };
    let mut worst: f64 = 0.0;
    for _ in 0..FD_PROBES {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut g = vec![0.0; 3];
        quad.eval(0.0, &x, Some(&mut g));
        worst = worst.max(fd_error(|y| quad.value(0.0, y), &x, &g, 1e-5));
    }
    record("quadratic".into(), worst);

    let rows = |n: usize, d: usize, rng: &mut gsbm::rng::Rng| {
        StateBatch::from_flat(d, (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect())
    };
    let times = |n: usize, rng: &mut gsbm::rng::Rng| (0..n).map(|_| rng.gen_range(0.01..0.99)).collect::<Vec<f64>>();

    let mut field = DriftField::new(FieldKind::Explicit, Direction::Forward, 2, 32, &mut rng).unwrap();
    let states = rows(32, 2, &mut rng);
    let batch = MatchBatch::new(states.clone(), states.clone(), times(32, &mut rng), states, rows(32, 2, &mut rng)).unwrap();
    let (_, grad) = explicit_loss_and_grad(&field, &batch).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..FD_PROBES {
        let i = rng.gen_range(0..grad.len());
        let orig = field.network().params()[i];
        let h = 1e-6;
        field.network_mut().params_mut()[i] = orig + h;
        let lp = explicit_loss(&field, &batch).unwrap();
        field.network_mut().params_mut()[i] = orig - h;
        let lm = explicit_loss(&field, &batch).unwrap();
        field.network_mut().params_mut()[i] = orig;
        worst = worst.max(relative_error((lp - lm) / (2.0 * h), grad[i]));
    }
    record("explicit loss".into(), worst);

    let mut field = DriftField::new(FieldKind::Implicit, Direction::Forward, 2, 32, &mut rng).unwrap();
    let batch = ImplicitBatch::new(rows(32, 2, &mut rng), rows(32, 2, &mut rng), times(32, &mut rng), rows(32, 2, &mut rng)).unwrap();
    let probe = rng_from_seed(42);
    let (_, grad) = implicit_loss_and_grad(&field, &batch, 1.0, Laplacian::Exact, &mut probe.clone()).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..FD_PROBES {
        let i = rng.gen_range(0..grad.len());
        let orig = field.network().params()[i];
        let h = 1e-6;
        field.network_mut().params_mut()[i] = orig + h;
        let lp = implicit_loss(&field, &batch, 1.0, Laplacian::Exact, &mut probe.clone()).unwrap();
        field.network_mut().params_mut()[i] = orig - h;
        let lm = implicit_loss(&field, &batch, 1.0, Laplacian::Exact, &mut probe.clone()).unwrap();
        field.network_mut().params_mut()[i] = orig;
        worst = worst.max(relative_error((lp - lm) / (2.0 * h), grad[i]));
    }
    record("implicit loss".into(), worst);

    let elapsed = clock.elapsed();
    Outcome::new(
        pass && within(elapsed, 120.0),
        format!("worst relative error < {FD_TOLERANCE:.0e}: {}; {:.1} s < 120 s", report.join(", "), elapsed.as_secs_f64()),
    )
}

fn desk_feasibility(shared: &Shared) -> Outcome {
    let run = shared.gsbm(0);
    let w2 = run.result.metrics.last().unwrap().w2;
    let minutes = run.elapsed.as_secs_f64() / 60.0;
    Outcome::new(
        w2 < 0.5 && minutes < 30.0,
        format!("final W2 {w2:.4} < 0.5, {minutes:.1} min < 30 min"),
    )
}

fn last_forward(metrics: &[EpochMetrics]) -> &EpochMetrics {
    metrics.iter().rev().find(|m| m.trained == Direction::Forward).unwrap()
}

fn gap_exceeds(lower: &EpochMetrics, upper: &EpochMetrics) -> (bool, f64, f64) {
    let gap = upper.objective - lower.objective;
    let se = (lower.objective_se.powi(2) + upper.objective_se.powi(2)).sqrt();
    (gap > 2.0 * se, gap, se)
}

fn optimality_ordering(shared: &Shared) -> Outcome {
    let gsbm = &shared.gsbm(0).result.metrics;
    let dsbm = &shared.dsbm().result.metrics;
    let (g, d, e0) = (last_forward(gsbm), last_forward(dsbm), &gsbm[0]);
    let (gd_ok, gd, gd_se) = gap_exceeds(g, d);
    let (de_ok, de, de_se) = gap_exceeds(d, e0);
    let rel = (g.objective - STUNNEL_REFERENCE_OBJECTIVE) / STUNNEL_REFERENCE_OBJECTIVE;
    Outcome::new(
        gd_ok && de_ok && rel.abs() <= 0.25,
        format!(
            "gsbm {:.2} ± {:.2}, dsbm {:.2} ± {:.2}, epoch 0 {:.2} ± {:.2}; dsbm - gsbm = {gd:.2} (2 SE = {:.2}), epoch0 - dsbm = {de:.2} (2 SE = {:.2}); gsbm vs {STUNNEL_REFERENCE_OBJECTIVE}: {:+.1}% (within ±25%)",
            g.objective,
            g.objective_se,
            d.objective,
            d.objective_se,
            e0.objective,
            e0.objective_se,
            2.0 * gd_se,
            2.0 * de_se,
            100.0 * rel
        ),
    )
}

/// Epochs whose forward objective rose by more than two standard errors of
/// the difference since the previous forward epoch.
fn monitor_violations(metrics: &[EpochMetrics]) -> Vec<(usize, f64, f64)> {
    let forward: Vec<&EpochMetrics> = metrics.iter().filter(|m| m.trained == Direction::Forward).collect();
    forward
        .windows(2)
        .filter_map(|w| {
            let rise = w[1].objective - w[0].objective;
            let se = (w[0].objective_se.powi(2) + w[1].objective_se.powi(2)).sqrt();
            (rise > 2.0 * se).then_some((w[1].epoch, rise, se))
        })
        .collect()
}

fn objective_monitor(shared: &Shared) -> Outcome {
    let mut violations = Vec::new();
    let mut largest: f64 = f64::NEG_INFINITY;
    for seed in 0..3 {
        let metrics = &shared.gsbm(seed).result.metrics;
        let forward: Vec<&EpochMetrics> = metrics.iter().filter(|m| m.trained == Direction::Forward).collect();
        for w in forward.windows(2) {
            let se = (w[0].objective_se.powi(2) + w[1].objective_se.powi(2)).sqrt();
            largest = largest.max((w[1].objective - w[0].objective) / se);
        }
        for (epoch, rise, se) in monitor_violations(metrics) {
            violations.push(format!("seed {seed} epoch {epoch}: +{rise:.2} (SE {se:.2})"));
        }
    }
    Outcome::new(
        violations.is_empty(),
        format!(
            "{} violating epochs over 3 seeds; largest rise {largest:.2} SE (limit 2){}",
            violations.len(),
            if violations.is_empty() { String::new() } else { format!(": {}", violations.join("; ")) }
        ),
    )
}

fn resampling_effect(_: &Shared) -> Outcome {
    let clock = Instant::now();
    let mut changes = Vec::new();
    for seed in 0..5 {
        let off = timed(&stunnel_low_noise(seed, false));
        let on = timed(&stunnel_low_noise(seed, true));
        changes.push(last_forward(&on.result.metrics).objective - last_forward(&off.result.metrics).objective);
    }
    let mean = changes.iter().sum::<f64>() / changes.len() as f64;
    let sd = (changes.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (changes.len() - 1) as f64).sqrt();
    let hours = clock.elapsed().as_secs_f64() / 3600.0;
    Outcome::new(
        mean < 0.0 && hours < 2.0,
        format!(
            "mean change {mean:.2} ± {:.2} < 0 (per seed: {}), {hours:.2} h < 2 h",
            sd / (changes.len() as f64).sqrt(),
            changes.iter().map(|c| format!("{c:.1}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn spider_corridor(_: &Shared) -> Outcome {
    let mut fractions = Vec::new();
    for sigma in [0.0, 1.0] {
        let run = timed(&spider_desk(sigma));
        let corridor = run.result.task.corridor.unwrap();
        fractions.push(corridor_fraction(&run.result.final_eval, &corridor));
    }
    Outcome::new(
        fractions[0] >= 0.8 && fractions[1] <= 0.2,
        format!(
            "through corridor: σ=0 {:.1}% (>= 80%), σ=1 {:.1}% (<= 20%)",
            100.0 * fractions[0],
            100.0 * fractions[1]
        ),
    )
}

fn opinion_depolarization(_: &Shared) -> Outcome {
    let cfg = opinion_desk();
    let run = timed(&cfg);
    let task = &run.result.task;
    let controlled = directional_similarity(run.result.final_eval.terminal()).unwrap().mass_beyond(0.9);

    let seed = SeedPath::new(cfg.seed).named("eval");
    let init = task.source.sample(cfg.eval_samples, &mut seed.named("source").rng());
    let mut zero = DriftField::new(FieldKind::Explicit, Direction::Forward, task.dim, 8, &mut rng_from_seed(0)).unwrap();
    zero.network_mut().params_mut().fill(0.0);
    let grid = Arc::new(TimeGrid::uniform(task.n_steps));
    let free = simulate_sde(&zero, &init, task.sigma, &grid, &mut seed.named("simulate").rng(), Some(&PolarizeBase)).unwrap();
    let uncontrolled = directional_similarity(free.terminal()).unwrap().mass_beyond(0.9);

    let w2: Vec<f64> = run.result.metrics.iter().map(|m| m.w2).collect();
    let monotone = w2.windows(2).all(|w| w[1] < w[0]);
    Outcome::new(
        uncontrolled > 0.0 && controlled <= 0.5 * uncontrolled && monotone,
        format!(
            "mass at |cos| > 0.9: controlled {:.2}% vs uncontrolled {:.2}% (ratio {:.2} <= 0.5); terminal W2 by epoch {} ({})",
            100.0 * controlled,
            100.0 * uncontrolled,
            controlled / uncontrolled,
            w2.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" > "),
            if monotone { "strictly decreasing" } else { "not monotone" }
        ),
    )
}

/// `V + c` for a constant `c`.
struct Shifted<'a>(&'a dyn StateCost, f64);

impl StateCost for Shifted<'_> {
    fn eval(&self, t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        self.0.eval(t, x, grad) + self.1
    }
}

fn path_integral_invariances(_: &Shared) -> Outcome {
    let task = make_task(TaskName::Stunnel, &TaskOverrides::default()).unwrap();
    let cost = task.state_cost(None);
    let sigma = 1.0;
    let grid = Arc::new(TimeGrid::uniform(100));
    let mut rng = rng_from_seed(111);
    let mut identical = true;
    for _ in 0..5 {
        let x0 = task.source.sample(1, &mut rng);
        let x1 = task.target.sample(1, &mut rng);
        let path = brownian_bridge(x0.row(0), x1.row(0), sigma, 30).unwrap();
        let a = impt_sample(&path, &cost, sigma, &grid, 64, &mut rng_from_seed(7)).unwrap();
        let shifted = Shifted(&cost, 123.5);
        let b = impt_sample(&path, &shifted, sigma, &grid, 64, &mut rng_from_seed(7)).unwrap();
        identical &= a.indices == b.indices;
    }

    let path = brownian_bridge(&[-1.0, 0.5], &[2.0, -1.0], sigma, 30).unwrap();
    let n = 4000;
    let trajs = sample_trajectory_joint(&path, sigma, &grid, n, &mut rng_from_seed(8)).unwrap();
    let log_w: Vec<f64> = trajs.iter().map(|t| path_log_weight(t, &path, &ZeroCost, sigma).unwrap()).collect();
    let batch = WeightedBatch::new(trajs, log_w).unwrap();
    let mid = grid.n_steps() / 2;
    let mut worst_z: f64 = 0.0;
    for f in [
        Box::new(move |t: &gsbm::gaussian_paths::Trajectory| t.states.row(mid)[0]) as Box<dyn Fn(&gsbm::gaussian_paths::Trajectory) -> f64>,
        Box::new(move |t: &gsbm::gaussian_paths::Trajectory| t.states.row(mid)[1].powi(2)),
        Box::new(move |t: &gsbm::gaussian_paths::Trajectory| t.states.row(mid / 2)[0] * t.states.row(mid)[1]),
    ] {
        let vals: Vec<f64> = batch.trajectories.iter().map(&f).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt();
        let weighted = batch.weighted_mean(&f).unwrap();
        worst_z = worst_z.max((weighted - mean).abs() / se);
    }
    Outcome::new(
        identical && worst_z <= 3.0,
        format!(
            "shifted-cost indices {}; weighted vs unweighted V=0 estimators differ by at most {worst_z:.2} SE (<= 3)",
            if identical { "identical" } else { "differ" }
        ),
    )
}

type Criterion = fn(&Shared) -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("quadratic bridge limits", quadratic_limits),
        ("covariance sampler", covariance_sampler),
        ("spline optimizer oracles", spline_opt_oracles),
        ("gradient suite", gradient_suite),
        ("desk-scale feasibility", desk_feasibility),
        ("optimality ordering", optimality_ordering),
        ("objective monitor", objective_monitor),
        ("resampling effect", resampling_effect),
        ("spider corridor", spider_corridor),
        ("opinion depolarization", opinion_depolarization),
        ("path-integral invariances", path_integral_invariances),
    ];
    let only: Option<Vec<usize>> = std::env::var("GSBM_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());

    let shared = Shared::default();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&number)) {
            continue;
        }
        let clock = Instant::now();
        let outcome = check(&shared);
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {number:>2} {name}: {} | {} [{:.1} s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            clock.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        if std::env::var_os("GSBM_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
