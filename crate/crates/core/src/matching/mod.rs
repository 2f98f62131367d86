//! Drift networks and the matching losses that train them.

mod batch;
mod field;
mod loss;
mod network;
mod train;

pub use batch::{ImplicitBatch, MatchBatch};
pub use field::{Direction, DriftField, FieldKind};
pub use loss::{explicit_loss, explicit_loss_and_grad, hutchinson_trace, implicit_loss, implicit_loss_and_grad, Laplacian};
pub use network::{JetOutput, JetSpec, NetConfig, Network, Tangent, Tape};
pub use train::{train_match, train_with, MatchData, MatchOptions, TrainReport};

#[cfg(test)]
mod tests;
