use std::io::BufRead;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{KdTree, StateCost};
use crate::numerics::sigmoid;
use crate::{GsbmError, Result};

/// A point cloud with a k-NN index.
#[derive(Debug, Clone)]
pub struct PointCloud {
    tree: KdTree,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(GsbmError::InvalidArgument("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GsbmError::InvalidArgument(format!("point {i} is not finite")));
        }
        Ok(PointCloud {
            tree: KdTree::build(points),
        })
    }

    /// Parses whitespace-separated XYZ lines. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn from_reader<R: BufRead>(reader: R, origin: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fail = |message: String| GsbmError::Parse {
                path: origin.into(),
                line: n + 1,
                message,
            };
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(fail(format!("expected 3 coordinates, found {}", fields.len())));
            }
            let mut p = [0.0; 3];
            for (slot, f) in p.iter_mut().zip(&fields) {
                *slot = f.parse::<f64>().map_err(|e| fail(format!("bad coordinate {f:?}: {e}")))?;
                if !slot.is_finite() {
                    return Err(fail(format!("non-finite coordinate {f:?}")));
                }
            }
            points.push(p);
        }
        if points.is_empty() {
            return Err(GsbmError::Parse {
                path: origin.into(),
                line: 0,
                message: "no points".into(),
            });
        }
        Self::new(points)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        self.tree.points()
    }

    pub fn nearest(&self, x: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        self.tree.nearest(x, k)
    }
}

/// The plane `z = a·x + b·y + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TangentPlane {
    pub fn normal(&self) -> [f64; 3] {
        [self.a, self.b, -1.0]
    }

    pub fn normal_sq(&self) -> f64 {
        self.a * self.a + self.b * self.b + 1.0
    }

    /// `xᵀn + c`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.a * x[0] + self.b * x[1] - x[2] + self.c
    }
}

pub const DEFAULT_NEIGHBORS: usize = 20;
pub const DEFAULT_PLANE_TAU: f64 = 1e-3;

/// Weighted least-squares plane over the `k` nearest neighbours of `x` with
/// weights `exp(−‖x − x_i‖/τ)`.
pub fn fit_tangent_plane(x: &[f64], cloud: &PointCloud, k: usize, tau: f64) -> Result<TangentPlane> {
    if k == 0 || k > cloud.len() {
        return Err(GsbmError::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            cloud.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(GsbmError::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let q = [x[0], x[1], x[2]];
    let nbrs = cloud.nearest(&q, k);
    let pts = cloud.points();
    let design = DMatrix::from_fn(nbrs.len(), 3, |r, col| {
        let p = pts[nbrs[r].0];
        match col {
            0 => p[0] - q[0],
            1 => p[1] - q[1],
            _ => 1.0,
        }
    });
    let target = DVector::from_fn(nbrs.len(), |r, _| pts[nbrs[r].0][2]);
    // Weights are shifted by the nearest distance; the solution is invariant
    // to a common scale and this keeps them from underflowing.
    let d_min = nbrs[0].1.sqrt();
    let sqrt_w = DVector::from_fn(nbrs.len(), |r, _| (-(nbrs[r].1.sqrt() - d_min) / (2.0 * tau)).exp());
    let sv = design.clone().svd(false, false).singular_values;
    let sol = if sv.min() > 1e-10 * sv.max() {
        // Rows arrive heaviest first, which keeps Householder QR accurate
        // even when the weights span many orders of magnitude.
        let mut aw = design;
        let mut bw = target;
        for r in 0..aw.nrows() {
            aw.row_mut(r).scale_mut(sqrt_w[r]);
            bw[r] *= sqrt_w[r];
        }
        let qr = aw.qr();
        let rhs = qr.q().transpose() * bw;
        qr.r()
            .solve_upper_triangular(&rhs)
            .ok_or(GsbmError::NotPositiveDefinite { size: 3 })?
    } else {
        log::warn!("rank-deficient neighbour set at {q:?}; using ridge-regularised plane fit");
        let mut m = Matrix3::<f64>::zeros();
        let mut rhs = Vector3::<f64>::zeros();
        for r in 0..design.nrows() {
            let row = Vector3::new(design[(r, 0)], design[(r, 1)], design[(r, 2)]);
            let w = sqrt_w[r] * sqrt_w[r];
            m += w * row * row.transpose();
            rhs += w * target[r] * row;
        }
        let reg = m + Matrix3::identity() * 1e-8;
        let sol = reg.lu().solve(&rhs).ok_or(GsbmError::NotPositiveDefinite { size: 3 })?;
        DVector::from_column_slice(sol.as_slice())
    };
    let (a, b, c0) = (sol[0], sol[1], sol[2]);
    Ok(TangentPlane {
        a,
        b,
        c: c0 - a * q[0] - b * q[1],
    })
}

/// `π(x) = x − ((xᵀn + c)/‖n‖²)·n`.
pub fn project_to_plane(x: &[f64], plane: &TangentPlane) -> [f64; 3] {
    let s = plane.residual(x) / plane.normal_sq();
    let n = plane.normal();
    [x[0] - s * n[0], x[1] - s * n[1], x[2] - s * n[2]]
}

/// Terrain-following cost on a LiDAR point cloud: distance to the local
/// tangent plane, height of the projection, and soft walls at the box edges.
#[derive(Debug, Clone)]
pub struct LidarCost {
    pub cloud: std::sync::Arc<PointCloud>,
    pub lambda: f64,
    pub neighbors: usize,
    pub tau: f64,
    pub bound: f64,
    pub wall_width: f64,
}

pub const LIDAR_LAMBDA: f64 = 5000.0;

impl LidarCost {
    pub fn new(cloud: std::sync::Arc<PointCloud>, lambda: f64) -> Self {
        LidarCost {
            neighbors: DEFAULT_NEIGHBORS.min(cloud.len()),
            cloud,
            lambda,
            tau: DEFAULT_PLANE_TAU,
            bound: 5.0,
            wall_width: 0.1,
        }
    }

    pub fn plane_at(&self, x: &[f64]) -> TangentPlane {
        fit_tangent_plane(x, &self.cloud, self.neighbors, self.tau).unwrap_or(TangentPlane { a: 0.0, b: 0.0, c: 0.0 })
    }

    /// The cost with the tangent plane held fixed; returns the manifold term
    /// separately as the second value.
    pub fn eval_with_plane(&self, x: &[f64], plane: &TangentPlane, grad: Option<&mut [f64]>) -> (f64, f64) {
        let n = plane.normal();
        let nn = plane.normal_sq();
        let r = plane.residual(x);
        let manifold = r * r / nn;
        let pz = x[2] + r / nn;
        let height = pz.exp();
        let mut walls = 0.0;
        let mut gw = [0.0; 2];
        for i in 0..2 {
            let hi = sigmoid((x[i] - self.bound) / self.wall_width);
            let lo = sigmoid((-self.bound - x[i]) / self.wall_width);
            walls += hi + lo;
            gw[i] = (hi * (1.0 - hi) - lo * (1.0 - lo)) / self.wall_width;
        }
        if let Some(g) = grad {
            for i in 0..3 {
                let dm = 2.0 * r * n[i] / nn;
                let dpz = if i == 2 { 1.0 } else { 0.0 } + n[i] / nn;
                g[i] = self.lambda * (dm + height * dpz + if i < 2 { gw[i] } else { 0.0 });
            }
        }
        (self.lambda * (manifold + height + walls), self.lambda * manifold)
    }
}

impl StateCost for LidarCost {
    fn eval(&self, _t: f64, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let plane = self.plane_at(x);
        self.eval_with_plane(x, &plane, grad).0
    }
}

pub fn lidar_cost(x: &[f64], cloud: &std::sync::Arc<PointCloud>, lambda: f64) -> f64 {
    LidarCost::new(cloud.clone(), lambda).value(0.0, x)
}
