//! Gaussian conditional paths pinned at two endpoints.

mod bridge;
mod grid;
mod path;
mod sampling;
pub mod spline;

pub use bridge::{brownian_bridge, brownian_bridge_on, quadratic_bridge_coeffs, quadratic_bridge_path, QuadraticBridge};
pub use grid::TimeGrid;
pub use path::{conditional_drift, GaussianPath, KnotLayout, PathPoint, PathRecord, DEFAULT_KNOTS, GAMMA_MIN, T_CLAMP};
pub(crate) use path::conditional_drift_into;
pub use sampling::{
    covariance_from_gain, integrate_gain, path_covariance, recover_increments, sample_marginal, sample_trajectory_joint,
    MarginalSamples, Trajectory,
};

/// `eval_path` under its spec-facing name.
pub fn eval_path(path: &GaussianPath, t: f64) -> crate::error::Result<PathPoint> {
    path.eval(t)
}
