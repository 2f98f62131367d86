use std::sync::Arc;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assignment::wasserstein2;
use super::metrics::{directional_similarity, estimate_objective, ObjectiveEstimate};
use super::output::RunWriter;
use super::sde::{simulate_sde, PolarizeBase, SimulationDrift, TrajectoryBatch};
use crate::batch::StateBatch;
use crate::condsoc::{
    condsoc_objective, detour_path, init_control_points, spline_opt_best, CondSocProblem, SplineOptConfig,
};
use crate::gaussian_paths::{brownian_bridge_on, conditional_drift, GaussianPath, KnotLayout, TimeGrid, Trajectory};
use crate::matching::{
    train_with, Direction, DriftField, FieldKind, ImplicitBatch, MatchBatch, MatchData, MatchOptions,
};
use crate::path_integral::impt_sample;
use crate::rng::{Rng, SeedPath};
use crate::state_costs::{
    MeanPolarizeDrift, MixtureDensity, Population, PopulationSnapshot, ReferenceDrift, SumCost,
};
use crate::tasks::{make_task, BaseDrift, TaskName, TaskOverrides, TaskSpec};
use crate::{GsbmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Conditional problems see the task's state cost.
    Gsbm,
    /// Conditional problems use `V ≡ 0`, so every path is a Brownian bridge.
    Dsbm,
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskName,
    /// Overrides the task's diffusion coefficient.
    pub sigma: Option<f64>,
    pub epochs: usize,
    /// Overrides the task's pairs per epoch.
    pub pairs: Option<usize>,
    /// Replaces the task's spline optimizer settings.
    pub spline: Option<SplineOptConfig>,
    pub matching: MatchOptions,
    pub match_kind: FieldKind,
    pub pi_resample: bool,
    /// Trajectories drawn per pair when resampling.
    pub resample_count: usize,
    /// Grid steps of the resampled trajectories.
    pub pi_steps: usize,
    pub mode: Mode,
    pub seed: u64,
    pub eval_samples: usize,
    /// Samples kept per population snapshot.
    pub population_size: usize,
    /// Grid stride of the objective estimate; `None` picks about 100 points.
    pub objective_stride: Option<usize>,
    pub task_overrides: TaskOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskName::Stunnel,
            sigma: None,
            epochs: 20,
            pairs: None,
            spline: None,
            matching: MatchOptions::default(),
            match_kind: FieldKind::Explicit,
            pi_resample: false,
            resample_count: 16,
            pi_steps: 100,
            mode: Mode::Gsbm,
            seed: 0,
            eval_samples: 512,
            population_size: 256,
            objective_stride: None,
            task_overrides: TaskOverrides::default(),
        }
    }
}

impl RunConfig {
    /// The task with this config's overrides applied.
    pub fn resolve_task(&self) -> Result<TaskSpec> {
        let mut o = self.task_overrides.clone();
        if self.sigma.is_some() {
            o.sigma = self.sigma;
        }
        if self.pairs.is_some() {
            o.pairs = self.pairs;
        }
        let mut task = make_task(self.task, &o)?;
        if let Some(s) = &self.spline {
            s.validate()?;
            task.spline = s.clone();
            if let Some(m) = o.spline_steps {
                task.spline.steps = m;
            }
        }
        Ok(task)
    }

    pub fn validate(&self, task: &TaskSpec) -> Result<()> {
        self.matching.validate()?;
        if self.epochs == 0 {
            return Err(GsbmError::Config("epochs must be positive".into()));
        }
        if self.eval_samples < 2 || self.population_size == 0 {
            return Err(GsbmError::Config("need at least 2 eval samples and a non-empty population".into()));
        }
        if self.pi_resample && (self.resample_count == 0 || self.pi_steps < 2) {
            return Err(GsbmError::Config("resampling needs trajectories and at least 2 grid steps".into()));
        }
        if self.pi_resample && task.sigma <= 0.0 {
            return Err(GsbmError::Config("path-integral resampling needs sigma > 0".into()));
        }
        if task.base_drift.is_some() {
            if self.match_kind == FieldKind::Implicit {
                return Err(GsbmError::Config("tasks with a base drift use explicit matching".into()));
            }
            if self.pi_resample {
                return Err(GsbmError::Config("path-integral resampling does not support a base drift".into()));
            }
        }
        Ok(())
    }

    fn stride(&self, task: &TaskSpec) -> usize {
        self.objective_stride.unwrap_or((task.n_steps / 100).max(1)).max(1)
    }
}

/// One row of `metrics.csv`. Feasibility and objective always refer to the
/// forward field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// The field trained this epoch.
    pub trained: Direction,
    /// `W2(p_1, ν)` on `eval_samples` samples.
    pub w2: f64,
    pub objective: f64,
    pub objective_se: f64,
    /// Mean of the last 100 matching losses.
    pub loss: f64,
    /// Mean effective sample size per pair; 0 without resampling.
    pub ess: f64,
    /// Mean conditional objective over pairs after optimization.
    pub condsoc_objective: f64,
}

/// One row of `timings.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTimings {
    pub epoch: usize,
    pub sim_seconds: f64,
    pub condsoc_seconds: f64,
    pub match_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub task: TaskSpec,
    pub metrics: Vec<EpochMetrics>,
    pub timings: Vec<EpochTimings>,
    /// Matching loss curve per epoch.
    pub losses: Vec<Vec<f64>>,
    pub forward: DriftField,
    pub backward: DriftField,
    /// Evaluation trajectories of the final forward field.
    pub final_eval: TrajectoryBatch,
}

/// Feasibility and optimality of a forward field.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub w2: f64,
    pub objective: ObjectiveEstimate,
    pub trajectories: TrajectoryBatch,
}

/// Simulates `field` from fresh source samples and scores it against
/// fresh target samples. `V` uses the simulated population.
pub fn evaluate(field: &DriftField, task: &TaskSpec, n: usize, stride: usize, seed: SeedPath) -> Result<Evaluation> {
    let init = task.source.sample(n, &mut seed.named("source").rng());
    let target = task.target.sample(n, &mut seed.named("target").rng());
    let grid = Arc::new(TimeGrid::uniform(task.n_steps));
    let base = base_simulation_drift(task);
    let trajs = simulate_sde(field, &init, task.sigma, &grid, &mut seed.named("simulate").rng(), base)?;
    let w2 = wasserstein2(trajs.terminal(), &target)?;
    let population = if task.needs_population() {
        let times = grid.times();
        let snaps: Vec<(f64, &StateBatch)> = (0..times.len())
            .step_by(stride)
            .chain(std::iter::once(times.len() - 1))
            .map(|k| (times[k], &trajs.states[k]))
            .collect();
        Some(Arc::new(population_from(snaps, n)?))
    } else {
        None
    };
    let cost = task.state_cost(population.as_ref());
    let objective = estimate_objective(field, &cost, &trajs, stride)?;
    Ok(Evaluation {
        w2,
        objective,
        trajectories: trajs,
    })
}

fn base_simulation_drift(task: &TaskSpec) -> Option<&'static dyn SimulationDrift> {
    match task.base_drift {
        Some(BaseDrift::Polarize) => Some(&PolarizeBase),
        None => None,
    }
}

/// Snapshots with a KDE (Scott bandwidth) of the first `cap` samples.
fn population_from(snaps: Vec<(f64, &StateBatch)>, cap: usize) -> Result<Population> {
    let mut times = Vec::with_capacity(snaps.len());
    let mut out = Vec::with_capacity(snaps.len());
    for (t, states) in snaps {
        if times.last().is_some_and(|&p: &f64| t <= p) {
            continue;
        }
        let idx: Vec<usize> = (0..states.len().min(cap)).collect();
        let samples = states.select(&idx);
        let bw = MixtureDensity::scott_bandwidth(&samples);
        out.push(PopulationSnapshot {
            density: MixtureDensity::kde(samples.clone(), bw)?,
            samples,
        });
        times.push(t);
    }
    Population::new(times, out)
}

/// Endpoint pairs with optional warm-start states at the knot times.
struct Coupling {
    x0: StateBatch,
    x1: StateBatch,
    /// `warm[i]` holds pair `i`'s simulated states at the knots.
    warm: Option<Vec<StateBatch>>,
    population: Option<Arc<Population>>,
}

fn snapshot_times(layout: &KnotLayout) -> Vec<f64> {
    let mut t = vec![0.0];
    t.extend_from_slice(layout.times());
    t.push(1.0);
    t
}

fn independent_coupling(task: &TaskSpec, layout: &KnotLayout, cap: usize, seed: SeedPath) -> Result<Coupling> {
    let n = task.pairs;
    let x0 = task.source.sample(n, &mut seed.named("source").rng());
    let x1 = task.target.sample(n, &mut seed.named("target").rng());
    let population = if task.needs_population() {
        let mut rng = seed.named("bridge-population").rng();
        let m = n.min(cap);
        let d = task.dim;
        let times = snapshot_times(layout);
        let batches: Vec<StateBatch> = times
            .iter()
            .map(|&t| {
                let s = task.sigma * (t * (1.0 - t)).sqrt();
                let mut b = StateBatch::zeros(m, d);
                for i in 0..m {
                    for (c, v) in b.row_mut(i).iter_mut().enumerate() {
                        let z: f64 = rng.sample(StandardNormal);
                        *v = (1.0 - t) * x0.row(i)[c] + t * x1.row(i)[c] + s * z;
                    }
                }
                b
            })
            .collect();
        Some(Arc::new(population_from(
            times.iter().copied().zip(batches.iter()).collect(),
            cap,
        )?))
    } else {
        None
    };
    Ok(Coupling {
        x0,
        x1,
        warm: None,
        population,
    })
}

fn simulated_coupling(
    field: &DriftField,
    task: &TaskSpec,
    layout: &KnotLayout,
    cap: usize,
    seed: SeedPath,
) -> Result<Coupling> {
    let n = task.pairs;
    let init = match field.direction() {
        Direction::Forward => task.source.sample(n, &mut seed.named("source").rng()),
        Direction::Backward => task.target.sample(n, &mut seed.named("target").rng()),
    };
    let grid = Arc::new(TimeGrid::uniform(task.n_steps));
    let trajs = simulate_sde(
        field,
        &init,
        task.sigma,
        &grid,
        &mut seed.named("simulate").rng(),
        base_simulation_drift(task),
    )?;
    let knot_idx: Vec<usize> = layout.times().iter().map(|&t| grid.nearest(t)).collect();
    let warm = (0..n)
        .map(|i| {
            let rows: Vec<&[f64]> = knot_idx.iter().map(|&k| trajs.states[k].row(i)).collect();
            StateBatch::from_rows(&rows)
        })
        .collect();
    let population = if task.needs_population() {
        let snaps = snapshot_times(layout)
            .into_iter()
            .map(|t| (t, trajs.at_time(t)))
            .collect();
        Some(Arc::new(population_from(snaps, cap)?))
    } else {
        None
    };
    Ok(Coupling {
        x0: trajs.initial().clone(),
        x1: trajs.terminal().clone(),
        warm: Some(warm),
        population,
    })
}

/// Solved conditional paths with their objectives.
struct Stage2 {
    paths: Vec<GaussianPath>,
    objective: f64,
}

fn solve_pairs(
    coupling: &Coupling,
    task: &TaskSpec,
    layout: &Arc<KnotLayout>,
    mode: Mode,
    seed: SeedPath,
) -> Result<Stage2> {
    let cost = match mode {
        Mode::Gsbm => task.state_cost(coupling.population.as_ref()),
        Mode::Dsbm => SumCost::new(),
    };
    let base = match (task.base_drift, &coupling.population) {
        (Some(BaseDrift::Polarize), Some(pop)) => Some(MeanPolarizeDrift {
            population: pop.clone(),
        }),
        _ => None,
    };
    let mut problem = CondSocProblem::new(&cost, task.sigma);
    if let Some(b) = &base {
        problem = problem.with_base_drift(b as &dyn ReferenceDrift);
    }
    let bridge_only = mode == Mode::Dsbm && base.is_none();
    let n = coupling.x0.len();
    let solved: Vec<(GaussianPath, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.child(i as u64).rng();
            let (x0, x1) = (coupling.x0.row(i), coupling.x1.row(i));
            let bridge = brownian_bridge_on(layout.clone(), x0, x1, task.sigma)?;
            let path = if bridge_only {
                bridge
            } else {
                let start = match &coupling.warm {
                    Some(w) => {
                        let (mean, std) = init_control_points(layout, &w[i], task.sigma)?;
                        GaussianPath::new(layout.clone(), x0.to_vec(), x1.to_vec(), mean, std)?
                    }
                    None => bridge,
                };
                let mut starts = Vec::with_capacity(1 + task.detours.len());
                for &a in &task.detours {
                    starts.push(detour_path(&start, a)?);
                }
                starts.insert(0, start);
                spline_opt_best(starts, &problem, &task.spline, &mut rng)?.path
            };
            let value = condsoc_objective(&path, &problem, &task.spline, &mut rng)?;
            Ok((path, value))
        })
        .collect::<Result<_>>()?;
    let objective = solved.iter().map(|(_, v)| v).sum::<f64>() / n as f64;
    Ok(Stage2 {
        paths: solved.into_iter().map(|(p, _)| p).collect(),
        objective,
    })
}

/// Path-integral resampled trajectories for every pair.
fn resample_pairs(
    paths: &[GaussianPath],
    task: &TaskSpec,
    population: Option<&Arc<Population>>,
    mode: Mode,
    count: usize,
    steps: usize,
    seed: SeedPath,
) -> Result<(Vec<Vec<Trajectory>>, f64)> {
    let cost = match mode {
        Mode::Gsbm => task.state_cost(population),
        Mode::Dsbm => SumCost::new(),
    };
    let grid = Arc::new(TimeGrid::uniform(steps));
    let out: Vec<(Vec<Trajectory>, f64)> = paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = seed.child(i as u64).rng();
            let r = impt_sample(p, &cost, task.sigma, &grid, count, &mut rng)?;
            Ok((r.trajectories, r.ess))
        })
        .collect::<Result<_>>()?;
    let ess = out.iter().map(|(_, e)| e).sum::<f64>() / out.len().max(1) as f64;
    Ok((out.into_iter().map(|(t, _)| t).collect(), ess))
}

/// Regression data for the matching stage.
struct MatchSource<'a> {
    /// Paths in the trained field's own time.
    paths: Vec<GaussianPath>,
    resampled: Option<&'a [Vec<Trajectory>]>,
    direction: Direction,
    base: Option<MeanPolarizeDrift>,
    sigma: f64,
}

impl MatchSource<'_> {
    fn sample(&self, kind: FieldKind, n: usize, rng: &mut Rng) -> Result<MatchData> {
        match (kind, self.resampled) {
            (FieldKind::Explicit, None) => {
                let mut b = MatchBatch::from_paths(&self.paths, n, self.sigma, rng)?;
                if let Some(f) = &self.base {
                    let mut fx = vec![0.0; b.states.dim()];
                    for i in 0..b.len() {
                        f.drift(b.times[i], b.states.row(i), &mut fx);
                        for (y, v) in b.targets.row_mut(i).iter_mut().zip(&fx) {
                            *y -= v;
                        }
                    }
                }
                Ok(MatchData::Explicit(b))
            }
            (FieldKind::Implicit, None) => ImplicitBatch::from_paths(&self.paths, n, rng).map(MatchData::Implicit),
            (kind, Some(res)) => {
                let d = self.paths[0].dim();
                let mut states = StateBatch::zeros(n, d);
                let mut times = Vec::with_capacity(n);
                let mut picks = Vec::with_capacity(n);
                for i in 0..n {
                    let p = rng.gen_range(0..res.len());
                    let tr = &res[p][rng.gen_range(0..res[p].len())];
                    let k = rng.gen_range(1..tr.grid.n_steps());
                    let t = tr.grid.times()[k];
                    states.row_mut(i).copy_from_slice(tr.states.row(k));
                    times.push(match self.direction {
                        Direction::Forward => t,
                        Direction::Backward => 1.0 - t,
                    });
                    picks.push(p);
                }
                match kind {
                    FieldKind::Explicit => {
                        let mut x0 = StateBatch::zeros(n, d);
                        let mut x1 = StateBatch::zeros(n, d);
                        let mut targets = StateBatch::zeros(n, d);
                        for (i, &p) in picks.iter().enumerate() {
                            let path = &self.paths[p];
                            let u = conditional_drift(path, states.row(i), times[i], self.sigma)?;
                            targets.row_mut(i).copy_from_slice(&u);
                            x0.row_mut(i).copy_from_slice(path.x0());
                            x1.row_mut(i).copy_from_slice(path.x1());
                        }
                        MatchBatch::new(x0, x1, times, states, targets).map(MatchData::Explicit)
                    }
                    FieldKind::Implicit => {
                        let mut b0 = StateBatch::zeros(n, d);
                        let mut b1 = StateBatch::zeros(n, d);
                        for i in 0..n {
                            b0.row_mut(i).copy_from_slice(self.paths[rng.gen_range(0..self.paths.len())].x0());
                            b1.row_mut(i).copy_from_slice(self.paths[rng.gen_range(0..self.paths.len())].x1());
                        }
                        ImplicitBatch::new(b0, b1, times, states).map(MatchData::Implicit)
                    }
                }
            }
        }
    }
}

/// Which field produces this epoch's coupling and which one is trained.
fn schedule(epoch: usize, task: &TaskSpec) -> (Option<Direction>, Direction) {
    if task.base_drift.is_some() {
        return ((epoch > 0).then_some(Direction::Forward), Direction::Forward);
    }
    match epoch {
        0 => (None, Direction::Forward),
        e if e % 2 == 1 => (Some(Direction::Forward), Direction::Backward),
        _ => (Some(Direction::Backward), Direction::Forward),
    }
}

/// Runs the alternating scheme for `cfg.epochs` epochs.
///
/// Epoch 0 solves the conditional problems on the independent coupling
/// `μ ⊗ ν` and trains the forward field. Afterwards odd epochs simulate the
/// forward field and train the backward one, even epochs the reverse. Tasks
/// with a base drift only have a forward field.
///
/// When `out` is given the run's artifacts are written there as epochs
/// complete; the status file records success or the failing stage.
pub fn gsbm_run(cfg: &RunConfig, out: Option<&RunWriter>) -> Result<RunResult> {
    let result = run_inner(cfg, out);
    if let Some(w) = out {
        match &result {
            Ok(_) => w.set_status("complete")?,
            Err(e) => w.set_status(&format!("failed: {e}"))?,
        }
    }
    result
}

fn run_inner(cfg: &RunConfig, out: Option<&RunWriter>) -> Result<RunResult> {
    let task = cfg.resolve_task()?;
    cfg.validate(&task)?;
    if let Some(w) = out {
        w.write_json("config.json", cfg)?;
        w.write_json("task.json", &task.geometry_json())?;
    }
    let layout = KnotLayout::uniform(task.knots);
    let stride = cfg.stride(&task);
    let root = SeedPath::new(cfg.seed);
    let mut forward = DriftField::new(
        cfg.match_kind,
        Direction::Forward,
        task.dim,
        task.hidden,
        &mut root.named("init-forward").rng(),
    )?;
    let mut backward = DriftField::new(
        cfg.match_kind,
        Direction::Backward,
        task.dim,
        task.hidden,
        &mut root.named("init-backward").rng(),
    )?;

    let mut metrics: Vec<EpochMetrics> = Vec::with_capacity(cfg.epochs);
    let mut timings = Vec::with_capacity(cfg.epochs);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut last_eval: Option<Evaluation> = None;
    let eval_seed = root.named("eval");

    for epoch in 0..cfg.epochs {
        let seed = root.child(epoch as u64);
        let (sim, train) = schedule(epoch, &task);
        log::info!("epoch {epoch}: coupling from {sim:?}, training {train:?}");

        let clock = Instant::now();
        let coupling = match sim {
            None => independent_coupling(&task, &layout, cfg.population_size, seed.named("coupling")),
            Some(Direction::Forward) => simulated_coupling(&forward, &task, &layout, cfg.population_size, seed.named("coupling")),
            Some(Direction::Backward) => simulated_coupling(&backward, &task, &layout, cfg.population_size, seed.named("coupling")),
        }
        .map_err(|e| e.at_stage(epoch, "simulate"))?;
        let sim_seconds = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let stage2 = solve_pairs(&coupling, &task, &layout, cfg.mode, seed.named("condsoc"))
            .map_err(|e| e.at_stage(epoch, "condsoc"))?;
        let (resampled, ess) = if cfg.pi_resample {
            let (r, ess) = resample_pairs(
                &stage2.paths,
                &task,
                coupling.population.as_ref(),
                cfg.mode,
                cfg.resample_count,
                cfg.pi_steps,
                seed.named("resample"),
            )
            .map_err(|e| e.at_stage(epoch, "resample"))?;
            (Some(r), ess)
        } else {
            (None, 0.0)
        };
        let condsoc_seconds = clock.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: conditional objective {:.4}", stage2.objective);

        let clock = Instant::now();
        let source = MatchSource {
            paths: match train {
                Direction::Forward => stage2.paths,
                Direction::Backward => stage2.paths.iter().map(GaussianPath::reversed).collect(),
            },
            resampled: resampled.as_deref(),
            direction: train,
            base: match (task.base_drift, &coupling.population) {
                (Some(BaseDrift::Polarize), Some(pop)) => Some(MeanPolarizeDrift {
                    population: pop.clone(),
                }),
                _ => None,
            },
            sigma: task.sigma,
        };
        let field = match train {
            Direction::Forward => &mut forward,
            Direction::Backward => &mut backward,
        };
        let kind = field.kind();
        let batch = cfg.matching.batch_size;
        let report = train_with(field, task.sigma, &cfg.matching, &mut seed.named("match").rng(), |_, rng| {
            source.sample(kind, batch, rng)
        })
        .map_err(|e| e.at_stage(epoch, "match"))?;
        let match_seconds = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let eval = match last_eval.take() {
            Some(prev) if train == Direction::Backward => prev,
            _ => evaluate(&forward, &task, cfg.eval_samples, stride, eval_seed).map_err(|e| e.at_stage(epoch, "eval"))?,
        };
        let eval_seconds = clock.elapsed().as_secs_f64();

        let row = EpochMetrics {
            epoch,
            trained: train,
            w2: eval.w2,
            objective: eval.objective.mean,
            objective_se: eval.objective.stderr,
            loss: report.tail_mean(100),
            ess,
            condsoc_objective: stage2.objective,
        };
        log::info!(
            "epoch {epoch}: W2 {:.4}, objective {:.3} ± {:.3}, loss {:.4}",
            row.w2,
            row.objective,
            row.objective_se,
            row.loss
        );
        metrics.push(row);
        timings.push(EpochTimings {
            epoch,
            sim_seconds,
            condsoc_seconds,
            match_seconds,
            eval_seconds,
        });
        losses.push(report.losses);
        if let Some(w) = out {
            w.write_metrics(&metrics)?;
            w.write_timings(&timings)?;
            w.write_epoch_trajectories(epoch, &eval.trajectories)?;
            if task.base_drift.is_some() {
                w.write_epoch_dirsim(
                    epoch,
                    &directional_similarity(eval.trajectories.initial())?,
                    &directional_similarity(eval.trajectories.terminal())?,
                )?;
            }
            let trained = match train {
                Direction::Forward => &forward,
                Direction::Backward => &backward,
            };
            w.write_checkpoint(trained, epoch)?;
        }
        last_eval = Some(eval);
    }

    Ok(RunResult {
        task,
        metrics,
        timings,
        losses,
        forward,
        backward,
        final_eval: last_eval.expect("at least one epoch").trajectories,
    })
}
