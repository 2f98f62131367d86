use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{JetSpec, NetConfig, Network, Tangent};
use crate::batch::StateBatch;
use crate::optim::Optimizer;
use crate::rng::Rng;
use crate::{GsbmError, Result};

const CHECKPOINT_VERSION: u32 = 1;

/// How the network output becomes a drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// The network outputs the drift directly.
    Explicit,
    /// The network outputs a scalar potential; the drift is its gradient.
    Implicit,
}

/// Which way in time the field transports mass.
///
/// A backward field is evaluated in reversed time `s = 1 − t`, so it is
/// simulated forward in `s` starting from the target marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriftField {
    kind: FieldKind,
    direction: Direction,
    dim: usize,
    net: Network,
    pub(crate) optimizer: Option<Optimizer>,
    /// Parameters the optimizer is working on when the network holds their
    /// moving average.
    pub(crate) raw_params: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    kind: FieldKind,
    direction: Direction,
    network: NetConfig,
    params: Vec<f64>,
}

impl DriftField {
    /// Default architecture: four residual blocks, 32 time frequencies.
    pub fn new(kind: FieldKind, direction: Direction, dim: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let out = match kind {
            FieldKind::Explicit => dim,
            FieldKind::Implicit => 1,
        };
        Self::with_config(kind, direction, NetConfig::new(dim, out, hidden), rng)
    }

    pub fn with_config(kind: FieldKind, direction: Direction, cfg: NetConfig, rng: &mut Rng) -> Result<Self> {
        let net = Network::new(cfg, rng)?;
        Self::from_network(kind, direction, net)
    }

    pub fn from_network(kind: FieldKind, direction: Direction, net: Network) -> Result<Self> {
        let cfg = net.config();
        let expected = match kind {
            FieldKind::Explicit => cfg.input_dim,
            FieldKind::Implicit => 1,
        };
        if cfg.output_dim != expected {
            return Err(GsbmError::Config(format!(
                "{kind:?} field over {} dims needs {expected} outputs, network has {}",
                cfg.input_dim, cfg.output_dim
            )));
        }
        Ok(DriftField {
            kind,
            direction,
            dim: cfg.input_dim,
            net,
            optimizer: None,
            raw_params: None,
        })
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    /// Drift at per-row times `t` (in the field's own time direction).
    pub fn drift(&self, t: &[f64], x: &StateBatch) -> StateBatch {
        assert_eq!(t.len(), x.len(), "one time per state");
        assert_eq!(x.dim(), self.dim, "state dimension");
        match self.kind {
            FieldKind::Explicit => StateBatch::from_flat(self.dim, self.net.eval(x.as_flat(), t)),
            FieldKind::Implicit => {
                let spec = JetSpec {
                    tangents: (0..self.dim).map(Tangent::Axis).collect(),
                    second: Vec::new(),
                };
                let (out, _) = self.net.forward(x.as_flat(), t, &spec);
                let n = x.len();
                let mut g = StateBatch::zeros(n, self.dim);
                for a in 0..self.dim {
                    let ch = out.channel(1 + a);
                    for i in 0..n {
                        g.row_mut(i)[a] = ch[i];
                    }
                }
                g
            }
        }
    }

    /// Drift of every state at the common time `t`.
    pub fn drift_at(&self, t: f64, x: &StateBatch) -> StateBatch {
        self.drift(&vec![t; x.len()], x)
    }

    /// Scalar potential values of an implicit field.
    pub fn potential(&self, t: &[f64], x: &StateBatch) -> Result<Vec<f64>> {
        if self.kind != FieldKind::Implicit {
            return Err(GsbmError::Contract("potential of an explicit field".into()));
        }
        Ok(self.net.eval(x.as_flat(), t))
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            direction: self.direction,
            network: self.net.config().clone(),
            params: self.net.params().to_vec(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(GsbmError::Config(format!("unsupported checkpoint version {}", ck.version)));
        }
        let net = Network::from_params(ck.network, ck.params)?;
        Self::from_network(ck.kind, ck.direction, net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
