//! Simulation, evaluation metrics and the alternating training loop.

mod assignment;
mod metrics;
mod output;
mod run;
mod sde;

pub use assignment::{linear_assignment, wasserstein2};
pub use metrics::{
    corridor_fraction, directional_similarity, estimate_objective, DirectionalSimilarity, ObjectiveEstimate,
    DIRSIM_BINS,
};
pub use output::{write_dirsim, write_trajectories, RunWriter, EXPORT_EVERY, EXPORT_TRAJECTORIES};
pub use run::{evaluate, gsbm_run, EpochMetrics, EpochTimings, Evaluation, Mode, RunConfig, RunResult};
pub use sde::{simulate_sde, PolarizeBase, SimulationDrift, TrajectoryBatch};
