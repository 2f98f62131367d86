use serde::{Deserialize, Serialize};

use super::batch::{ImplicitBatch, MatchBatch};
use super::field::{DriftField, FieldKind};
use super::loss::{explicit_loss_and_grad, implicit_loss_and_grad, Laplacian};
use crate::gaussian_paths::GaussianPath;
use crate::optim::{clip_grad_norm, Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::{GsbmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate at the last step relative to the first; the rate decays
    /// geometrically in between and restarts with every call.
    pub final_lr_ratio: f64,
    /// Decay of the parameter moving average left in the network after
    /// training; 0 keeps the raw parameters.
    pub ema_decay: f64,
    pub grad_clip: Option<f64>,
    /// `None` picks exact for d ≤ 3 and one Hutchinson probe otherwise.
    pub laplacian: Option<Laplacian>,
    pub log_every: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            steps: 1000,
            batch_size: 256,
            learning_rate: 1e-3,
            final_lr_ratio: 0.1,
            ema_decay: 0.99,
            grad_clip: Some(10.0),
            laplacian: None,
            log_every: 100,
        }
    }
}

impl MatchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(GsbmError::Config("matching batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(GsbmError::Config("matching learning_rate must be positive".into()));
        }
        if !(self.final_lr_ratio > 0.0 && self.final_lr_ratio <= 1.0) {
            return Err(GsbmError::Config("matching final_lr_ratio must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(GsbmError::Config("matching ema_decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One minibatch for either loss.
#[derive(Debug, Clone)]
pub enum MatchData {
    Explicit(MatchBatch),
    Implicit(ImplicitBatch),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over the last `k` steps.
    pub fn tail_mean(&self, k: usize) -> f64 {
        let k = k.min(self.losses.len()).max(1);
        let tail = &self.losses[self.losses.len().saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Runs `opts.steps` Adam updates on batches produced by `sampler`.
///
/// The optimizer state lives in the field, so consecutive calls continue
/// the same moment estimates. With `ema_decay > 0` the network is left
/// holding an exponential moving average of the iterates, and the next call
/// resumes from the raw iterate while the average carries over.
pub fn train_with<F>(field: &mut DriftField, sigma: f64, opts: &MatchOptions, rng: &mut Rng, mut sampler: F) -> Result<TrainReport>
where
    F: FnMut(usize, &mut Rng) -> Result<MatchData>,
{
    opts.validate()?;
    let n_params = field.network().n_params();
    let mut optimizer = field
        .optimizer
        .take()
        .filter(|o| o.n_params() == n_params)
        .unwrap_or_else(|| Optimizer::new(OptimizerKind::adam(), opts.learning_rate, n_params));
    let raw = field.raw_params.take().filter(|r| r.len() == n_params);
    let mut ema = (opts.ema_decay > 0.0).then(|| field.network().params().to_vec());
    if let (Some(r), Some(_)) = (raw, &ema) {
        field.network_mut().params_mut().copy_from_slice(&r);
    }
    let laplacian = opts.laplacian.unwrap_or_else(|| Laplacian::auto(field.dim()));
    let mut report = TrainReport::default();
    let decay = opts.final_lr_ratio.powf(1.0 / opts.steps.max(1) as f64);
    optimizer.set_lr(opts.learning_rate);
    for step in 0..opts.steps {
        let data = sampler(step, rng)?;
        let (loss, mut grad) = match (&data, field.kind()) {
            (MatchData::Explicit(b), FieldKind::Explicit) => explicit_loss_and_grad(field, b)?,
            (MatchData::Implicit(b), FieldKind::Implicit) => implicit_loss_and_grad(field, b, sigma, laplacian, rng)?,
            _ => return Err(GsbmError::Contract("batch kind does not match the field".into())),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let pnorm = field.network().params().iter().map(|p| p * p).sum::<f64>().sqrt();
            return Err(GsbmError::NonFiniteLoss {
                step,
                detail: format!(
                    "loss = {loss}, last finite loss = {:?}, parameter norm = {pnorm:.3e}",
                    report.losses.last()
                ),
            });
        }
        if let Some(max) = opts.grad_clip {
            clip_grad_norm(&mut grad, max);
        }
        optimizer.step(field.network_mut().params_mut(), &grad);
        optimizer.set_lr(optimizer.lr() * decay);
        if let Some(avg) = ema.as_mut() {
            let k = opts.ema_decay;
            for (a, p) in avg.iter_mut().zip(field.network().params()) {
                *a = k * *a + (1.0 - k) * p;
            }
        }
        report.losses.push(loss);
        if opts.log_every > 0 && (step + 1) % opts.log_every == 0 {
            log::debug!("match step {}: loss {:.5}", step + 1, report.tail_mean(opts.log_every));
        }
    }
    field.optimizer = Some(optimizer);
    if let Some(avg) = ema {
        field.raw_params = Some(field.network().params().to_vec());
        field.network_mut().params_mut().copy_from_slice(&avg);
    }
    Ok(report)
}

/// Trains on fresh minibatches drawn from `paths` every step.
pub fn train_match(field: &mut DriftField, paths: &[GaussianPath], sigma: f64, opts: &MatchOptions, rng: &mut Rng) -> Result<TrainReport> {
    let kind = field.kind();
    let n = opts.batch_size;
    train_with(field, sigma, opts, rng, |_, rng| match kind {
        FieldKind::Explicit => MatchBatch::from_paths(paths, n, sigma, rng).map(MatchData::Explicit),
        FieldKind::Implicit => ImplicitBatch::from_paths(paths, n, rng).map(MatchData::Implicit),
    })
}
