use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::batch::{ImplicitBatch, MatchBatch};
use super::field::{DriftField, FieldKind};
use super::network::{JetSpec, Tangent};
use crate::rng::Rng;
use crate::{GsbmError, Result};

/// How the implicit loss evaluates `Δs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Laplacian {
    /// Sum of exact second derivatives along every axis.
    Exact,
    /// Rademacher probes `vᵀ∇²s v`, averaged.
    Hutchinson { probes: usize },
}

impl Laplacian {
    /// Exact in up to three dimensions, one Hutchinson probe above.
    pub fn auto(dim: usize) -> Self {
        if dim <= 3 {
            Laplacian::Exact
        } else {
            Laplacian::Hutchinson { probes: 1 }
        }
    }
}

/// Hutchinson estimate of `tr A` from `probes` Rademacher vectors, given
/// `quad(v) = vᵀAv`. Returns the mean and its standard error.
pub fn hutchinson_trace<F: FnMut(&[f64]) -> f64>(mut quad: F, dim: usize, probes: usize, rng: &mut Rng) -> (f64, f64) {
    let mut v = vec![0.0; dim];
    let vals: Vec<f64> = (0..probes)
        .map(|_| {
            for x in v.iter_mut() {
                *x = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            }
            quad(&v)
        })
        .collect();
    crate::numerics::mean_stderr(&vals)
}

fn require(field: &DriftField, kind: FieldKind) -> Result<()> {
    if field.kind() != kind {
        return Err(GsbmError::Contract(format!("{kind:?} loss on a {:?} field", field.kind())));
    }
    Ok(())
}

/// Mean of `½‖u_θ(t, X_t) − u_{t|0,1}(X_t)‖²`.
pub fn explicit_loss(field: &DriftField, batch: &MatchBatch) -> Result<f64> {
    require(field, FieldKind::Explicit)?;
    let pred = field.drift(&batch.times, &batch.states);
    let n = batch.len() as f64;
    let sum: f64 = pred
        .as_flat()
        .iter()
        .zip(batch.targets.as_flat())
        .map(|(p, q)| 0.5 * (p - q) * (p - q))
        .sum();
    Ok(sum / n)
}

pub fn explicit_loss_and_grad(field: &DriftField, batch: &MatchBatch) -> Result<(f64, Vec<f64>)> {
    require(field, FieldKind::Explicit)?;
    let net = field.network();
    let (out, tape) = net.forward(batch.states.as_flat(), &batch.times, &JetSpec::value_only());
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let g_out: Vec<f64> = out
        .data
        .iter()
        .zip(batch.targets.as_flat())
        .map(|(p, q)| {
            let r = p - q;
            loss += 0.5 * r * r;
            r / n
        })
        .collect();
    Ok((loss / n, net.backward(&tape, &g_out)))
}

/// Implicit loss `E_μ[s_0] − E_ν[s_1] + E_{t,p_t}[∂t s + ½‖∇s‖² + (σ²/2)Δs]`.
pub fn implicit_loss(field: &DriftField, batch: &ImplicitBatch, sigma: f64, laplacian: Laplacian, rng: &mut Rng) -> Result<f64> {
    implicit_eval(field, batch, sigma, laplacian, rng, false).map(|(l, _)| l)
}

pub fn implicit_loss_and_grad(
    field: &DriftField,
    batch: &ImplicitBatch,
    sigma: f64,
    laplacian: Laplacian,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    implicit_eval(field, batch, sigma, laplacian, rng, true).map(|(l, g)| (l, g.unwrap_or_default()))
}

fn implicit_eval(
    field: &DriftField,
    batch: &ImplicitBatch,
    sigma: f64,
    laplacian: Laplacian,
    rng: &mut Rng,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    require(field, FieldKind::Implicit)?;
    let net = field.network();
    let d = field.dim();
    let mut grad = want_grad.then(|| vec![0.0; net.n_params()]);
    let mut loss = 0.0;

    for (states, t_edge, sign) in [(&batch.boundary0, 0.0, 1.0), (&batch.boundary1, 1.0, -1.0)] {
        let m = states.len();
        let t = vec![t_edge; m];
        let (out, tape) = net.forward(states.as_flat(), &t, &JetSpec::value_only());
        loss += sign * out.data.iter().sum::<f64>() / m as f64;
        if let Some(g) = grad.as_mut() {
            let g_out = vec![sign / m as f64; m];
            for (a, b) in g.iter_mut().zip(net.backward(&tape, &g_out)) {
                *a += b;
            }
        }
    }

    let n = batch.times.len();
    let mut tangents: Vec<Tangent> = (0..d).map(Tangent::Axis).collect();
    tangents.push(Tangent::Time);
    let (second, lap_weight): (Vec<usize>, f64) = match laplacian {
        Laplacian::Exact => ((0..d).collect(), 1.0),
        Laplacian::Hutchinson { probes } => {
            if probes == 0 {
                return Err(GsbmError::InvalidArgument("Hutchinson needs at least one probe".into()));
            }
            let mut idx = Vec::with_capacity(probes);
            for _ in 0..probes {
                let v: Vec<f64> = (0..n * d).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
                idx.push(tangents.len());
                tangents.push(Tangent::Probe(v));
            }
            (idx, 1.0 / probes as f64)
        }
    };
    let n_tan = tangents.len();
    let spec = JetSpec { tangents, second };
    let (out, tape) = net.forward(batch.states.as_flat(), &batch.times, &spec);
    let half_s2 = 0.5 * sigma * sigma;
    let mut interior = 0.0;
    for i in 0..n {
        let grad_sq: f64 = (0..d).map(|a| out.channel(1 + a)[i].powi(2)).sum();
        let dt = out.channel(1 + d)[i];
        let lap: f64 = (0..spec.second.len()).map(|j| out.channel(1 + n_tan + j)[i]).sum::<f64>() * lap_weight;
        interior += dt + 0.5 * grad_sq + half_s2 * lap;
    }
    loss += interior / n as f64;
    if !loss.is_finite() {
        return Ok((loss, grad));
    }
    if let Some(g) = grad.as_mut() {
        let inv = 1.0 / n as f64;
        let mut g_out = vec![0.0; out.data.len()];
        for a in 0..d {
            let ch = out.channel(1 + a);
            for i in 0..n {
                g_out[(1 + a) * n + i] = ch[i] * inv;
            }
        }
        for i in 0..n {
            g_out[(1 + d) * n + i] = inv;
        }
        for j in 0..spec.second.len() {
            for i in 0..n {
                g_out[(1 + n_tan + j) * n + i] = half_s2 * lap_weight * inv;
            }
        }
        for (a, b) in g.iter_mut().zip(net.backward(&tape, &g_out)) {
            *a += b;
        }
    }
    Ok((loss, grad))
}
