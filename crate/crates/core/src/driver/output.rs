use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::DirectionalSimilarity;
use super::run::{EpochMetrics, EpochTimings};
use super::sde::TrajectoryBatch;
use crate::matching::{Direction, DriftField};
use crate::Result;

/// Trajectories written per export.
pub const EXPORT_TRAJECTORIES: usize = 64;
/// Grid stride between exported steps.
pub const EXPORT_EVERY: usize = 10;

/// Writes `traj_id,step,t,x0,..` rows for the first `n` trajectories at
/// every `every`-th step (the final step is always included).
pub fn write_trajectories(batch: &TrajectoryBatch, path: impl AsRef<Path>, n: usize, every: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = batch.dim();
    let mut header = vec!["traj_id".to_string(), "step".into(), "t".into()];
    header.extend((0..d).map(|c| format!("x{c}")));
    w.write_record(&header)?;
    let last = batch.states.len() - 1;
    let steps: Vec<usize> = (0..=last).filter(|k| k % every.max(1) == 0 || *k == last).collect();
    let times = batch.grid.times();
    for i in 0..n.min(batch.len()) {
        for &k in &steps {
            let mut rec = vec![i.to_string(), k.to_string(), times[k].to_string()];
            rec.extend(batch.states[k].row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `bin_lo,bin_hi,<column>..` with one count column per histogram.
pub fn write_dirsim(columns: &[(&str, &DirectionalSimilarity)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["bin_lo".to_string(), "bin_hi".into()];
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header)?;
    let edges = DirectionalSimilarity::bin_edges();
    for b in 0..edges.len() - 1 {
        let mut rec = vec![edges[b].to_string(), edges[b + 1].to_string()];
        rec.extend(columns.iter().map(|(_, h)| h.counts[b].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// The on-disk layout of one run.
///
/// ```text
/// out/
///   status                      running | complete | failed: <message>
///   config.json                 the resolved run configuration
///   task.json                   task geometry for plotting
///   metrics.csv                 one row per epoch
///   timings.csv                 wall-clock seconds per stage and epoch
///   trajectories_epoch{n}.csv   evaluation trajectories of the forward field
///   dirsim_epoch{n}.csv         opinion tasks only
///   checkpoints/{forward,backward}_epoch{n}.json
/// ```
#[derive(Debug, Clone)]
pub struct RunWriter {
    root: PathBuf,
    trajectories: bool,
    checkpoints: bool,
}

impl RunWriter {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("checkpoints"))?;
        let w = RunWriter {
            root,
            trajectories: true,
            checkpoints: true,
        };
        w.set_status("running")?;
        Ok(w)
    }

    /// Turns per-epoch trajectory and checkpoint files on or off.
    pub fn with_exports(mut self, trajectories: bool, checkpoints: bool) -> Self {
        self.trajectories = trajectories;
        self.checkpoints = checkpoints;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn set_status(&self, status: &str) -> Result<()> {
        let mut f = fs::File::create(self.root.join("status"))?;
        writeln!(f, "{status}")?;
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        fs::write(self.root.join(name), serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    pub fn write_metrics(&self, rows: &[EpochMetrics]) -> Result<()> {
        write_rows(rows, &self.root.join("metrics.csv"))
    }

    pub fn write_timings(&self, rows: &[EpochTimings]) -> Result<()> {
        write_rows(rows, &self.root.join("timings.csv"))
    }

    pub fn write_epoch_trajectories(&self, epoch: usize, batch: &TrajectoryBatch) -> Result<()> {
        if !self.trajectories {
            return Ok(());
        }
        write_trajectories(
            batch,
            self.root.join(format!("trajectories_epoch{epoch}.csv")),
            EXPORT_TRAJECTORIES,
            EXPORT_EVERY,
        )
    }

    pub fn write_epoch_dirsim(&self, epoch: usize, initial: &DirectionalSimilarity, terminal: &DirectionalSimilarity) -> Result<()> {
        if !self.trajectories {
            return Ok(());
        }
        write_dirsim(
            &[("t0", initial), ("t1", terminal)],
            self.root.join(format!("dirsim_epoch{epoch}.csv")),
        )
    }

    pub fn checkpoint_path(&self, direction: Direction, epoch: usize) -> PathBuf {
        let name = match direction {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        };
        self.root.join("checkpoints").join(format!("{name}_epoch{epoch}.json"))
    }

    pub fn write_checkpoint(&self, field: &DriftField, epoch: usize) -> Result<()> {
        if !self.checkpoints {
            return Ok(());
        }
        field.save(self.checkpoint_path(field.direction(), epoch))
    }
}
