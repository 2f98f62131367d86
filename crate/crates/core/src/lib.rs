//! Generalized Schrödinger bridge matching.
//!
//! Learns a diffusion `dX = u(X, t) dt + σ dW` transporting a source
//! distribution to a target one while minimizing kinetic energy plus a
//! state cost. Training alternates between regressing a drift network onto
//! conditional drifts of Gaussian bridge paths and re-solving a per-pair
//! conditional control problem over spline-parametrized paths.

pub mod batch;
pub mod condsoc;
pub mod driver;
pub mod error;
pub mod gaussian_paths;
pub mod matching;
pub mod numerics;
pub mod optim;
pub mod path_integral;
pub mod rng;
pub mod state_costs;
pub mod tasks;

pub use batch::StateBatch;
pub use error::{GsbmError, Result};
