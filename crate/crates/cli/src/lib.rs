//! Command-line front end: `run`, `eval`, `export` and `list-tasks`.
//!
//! [`run_command`] parses an argument vector and returns the process exit
//! code, so the binary is a thin wrapper and tests can drive it in-process.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gsbm::driver::{
    evaluate, gsbm_run, simulate_sde, write_trajectories, Mode, PolarizeBase, RunConfig, RunWriter, SimulationDrift,
    EXPORT_EVERY, EXPORT_TRAJECTORIES,
};
use gsbm::gaussian_paths::TimeGrid;
use gsbm::matching::{Direction, DriftField, FieldKind};
use gsbm::rng::SeedPath;
use gsbm::tasks::{list_tasks, TaskName};
use gsbm::GsbmError;

/// Version of the JSON config schema read by `run --config`.
pub const CONFIG_VERSION: u32 = 1;
/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "GSBM_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config {path}: {detail}")]
    Config { path: PathBuf, detail: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] GsbmError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) | CliError::Core(GsbmError::Config(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// What a run writes besides metrics, status and config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportOptions {
    pub trajectories: bool,
    pub checkpoints: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            trajectories: true,
            checkpoints: true,
        }
    }
}

/// The document accepted by `run --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: u32,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub export: ExportOptions,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: ConfigFile = serde_json::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                detail: format!("unsupported version {}, expected {CONFIG_VERSION}", cfg.version),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }
}

#[derive(Debug, Parser)]
#[command(name = "gsbm", version, about = "Generalized Schrödinger bridge matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Gsbm,
    Dsbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MatchArg {
    Explicit,
    Implicit,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a bridge and write metrics, trajectories and checkpoints.
    Run {
        /// JSON config file; flags given on the command line take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Path-integral resampling of the conditional paths; a bare flag means `on`.
        #[arg(long, value_enum, num_args = 0..=1, default_missing_value = "on")]
        pi_resample: Option<Toggle>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long = "match", value_enum)]
        match_kind: Option<MatchArg>,
        /// Worker threads for the per-pair stage (default: logical cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (default: $GSBM_OUT_DIR/<task>-seed<seed>, else runs/...).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute W2 and the objective from a run's forward checkpoint.
    Eval {
        /// Directory written by `run`.
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint epoch (default: the latest forward checkpoint).
        #[arg(long)]
        epoch: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulate a checkpoint and write trajectories for plotting.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        epoch: Option<usize>,
        /// Output CSV (default: <run>/export_epoch<n>.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = EXPORT_TRAJECTORIES)]
        trajectories: usize,
        #[arg(long, default_value_t = EXPORT_EVERY)]
        every: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the registered task names.
    ListTasks,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            task,
            sigma,
            epochs,
            seed,
            pi_resample,
            mode,
            match_kind,
            workers,
            out,
        } => {
            let mut file = match &config {
                Some(p) => ConfigFile::load(p)?,
                None => ConfigFile {
                    version: CONFIG_VERSION,
                    run: RunConfig::default(),
                    out: None,
                    export: ExportOptions::default(),
                },
            };
            let run = &mut file.run;
            if let Some(t) = task {
                run.task = t.parse::<TaskName>()?;
            }
            if sigma.is_some() {
                run.sigma = sigma;
            }
            if let Some(e) = epochs {
                run.epochs = e;
            }
            if let Some(s) = seed {
                run.seed = s;
            }
            if let Some(t) = pi_resample {
                run.pi_resample = t == Toggle::On;
            }
            if let Some(m) = mode {
                run.mode = match m {
                    ModeArg::Gsbm => Mode::Gsbm,
                    ModeArg::Dsbm => Mode::Dsbm,
                };
            }
            if let Some(m) = match_kind {
                run.match_kind = match m {
                    MatchArg::Explicit => FieldKind::Explicit,
                    MatchArg::Implicit => FieldKind::Implicit,
                };
            }
            let out = out
                .or(file.out.clone())
                .unwrap_or_else(|| default_out_dir(&file.run));
            run_to(&file.run, &out, file.export, workers)
        }
        Command::Eval {
            run,
            epoch,
            samples,
            seed,
        } => {
            let cfg = read_run_config(&run)?;
            let task = cfg.resolve_task()?;
            let field = load_forward(&run, epoch)?;
            let n = samples.unwrap_or(cfg.eval_samples);
            let stride = cfg.objective_stride.unwrap_or((task.n_steps / 100).max(1));
            let e = evaluate(&field, &task, n, stride, SeedPath::new(seed).named("eval"))?;
            let report = serde_json::json!({
                "w2": e.w2,
                "objective": e.objective.mean,
                "objective_se": e.objective.stderr,
                "samples": n,
            });
            println!("{report}");
            Ok(())
        }
        Command::Export {
            run,
            epoch,
            out,
            trajectories,
            every,
            seed,
        } => {
            let cfg = read_run_config(&run)?;
            let task = cfg.resolve_task()?;
            let (epoch, path) = forward_checkpoint(&run, epoch)?;
            let field = DriftField::load(&path)?;
            let seed = SeedPath::new(seed).named("export");
            let init = task.source.sample(trajectories, &mut seed.named("source").rng());
            let grid = std::sync::Arc::new(TimeGrid::uniform(task.n_steps));
            let base: Option<&dyn SimulationDrift> = task.base_drift.map(|_| &PolarizeBase as &dyn SimulationDrift);
            let batch = simulate_sde(&field, &init, task.sigma, &grid, &mut seed.named("simulate").rng(), base)?;
            let dest = out.unwrap_or_else(|| run.join(format!("export_epoch{epoch}.csv")));
            write_trajectories(&batch, &dest, trajectories, every)?;
            println!("{}", dest.display());
            Ok(())
        }
        Command::ListTasks => {
            for t in list_tasks() {
                println!("{t}");
            }
            Ok(())
        }
    }
}

fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    let root = std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{}-seed{}", cfg.task, cfg.seed))
}

/// Runs `cfg` writing into `out`, on a pool of `workers` threads.
pub fn run_to(cfg: &RunConfig, out: &Path, export: ExportOptions, workers: Option<usize>) -> Result<()> {
    if workers == Some(0) {
        return Err(CliError::Usage("--workers must be positive".into()));
    }
    cfg.validate(&cfg.resolve_task()?)?;
    let writer = RunWriter::create(out)?.with_exports(export.trajectories, export.checkpoints);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let result = pool.install(|| gsbm_run(cfg, Some(&writer)))?;
    let last = result.metrics.last().expect("at least one epoch");
    log::info!("finished: W2 {:.4}, objective {:.3}", last.w2, last.objective);
    Ok(())
}

fn read_run_config(run: &Path) -> Result<RunConfig> {
    let path = run.join("config.json");
    let text = fs::read_to_string(&path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config {
        path,
        detail: e.to_string(),
    })
}

/// The forward checkpoint for `epoch`, or the latest one.
fn forward_checkpoint(run: &Path, epoch: Option<usize>) -> Result<(usize, PathBuf)> {
    let dir = run.join("checkpoints");
    if let Some(e) = epoch {
        let p = dir.join(format!("forward_epoch{e}.json"));
        return if p.exists() {
            Ok((e, p))
        } else {
            Err(CliError::Usage(format!("no forward checkpoint for epoch {e} in {}", dir.display())))
        };
    }
    let entries = fs::read_dir(&dir).map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n = name.strip_prefix("forward_epoch")?.strip_suffix(".json")?.parse().ok()?;
            Some((n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
        .ok_or_else(|| CliError::Usage(format!("no forward checkpoints in {}", dir.display())))
}

fn load_forward(run: &Path, epoch: Option<usize>) -> Result<DriftField> {
    let (_, path) = forward_checkpoint(run, epoch)?;
    let field = DriftField::load(path)?;
    if field.direction() != Direction::Forward {
        return Err(CliError::Usage("checkpoint is not a forward field".into()));
    }
    Ok(field)
}
