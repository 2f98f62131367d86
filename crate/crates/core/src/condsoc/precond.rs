use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::gaussian_paths::{spline::SplineBasis, KnotLayout};

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Inverse kinetic-energy metric on the knot parameters.
///
/// The mean block is the Gram matrix of spline slopes `∫ D_k D_l dt` over
/// the interior knots. The std block is the Gauss-Newton matrix of
/// `∂c/∂s_k` at the Brownian bridge, where `c = ∂γ − σ²/(2γ)` and `s_k` are
/// the interior ratio nodes; at the bridge `∂c/∂s_k = r R'_k + ((1 − t)/r) R_k`, which
/// does not depend on `σ`.
#[derive(Debug, Clone)]
pub(crate) struct KineticMetric {
    mean: Cholesky<f64, Dyn>,
    ratio: Cholesky<f64, Dyn>,
}

fn unit_bases(basis: &SplineBasis) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = basis.len();
    (0..n)
        .map(|k| {
            let mut y = vec![0.0; n];
            y[k] = 1.0;
            let m2 = basis.second_derivatives(&y, 1);
            (y, m2)
        })
        .collect()
}

fn eval_all(basis: &SplineBasis, units: &[(Vec<f64>, Vec<f64>)], t: f64) -> (Vec<f64>, Vec<f64>) {
    let st = basis.stencil(t);
    let mut val = vec![0.0; units.len()];
    let mut der = vec![0.0; units.len()];
    for (k, (y, m2)) in units.iter().enumerate() {
        let (mut v, mut d) = ([0.0], [0.0]);
        basis.eval_into(&st, y, m2, 1, &mut v, &mut d);
        val[k] = v[0];
        der[k] = d[0];
    }
    (val, der)
}

fn regularized_cholesky(mut m: DMatrix<f64>) -> Cholesky<f64, Dyn> {
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)]).fold(0.0, f64::max).max(1e-12);
    for i in 0..n {
        m[(i, i)] += 1e-8 * scale;
    }
    Cholesky::new(m).expect("kinetic metric is positive definite")
}

impl KineticMetric {
    pub(crate) fn new(layout: &KnotLayout, eps: f64) -> Self {
        let k = layout.len();
        let mean_basis = layout.mean_basis();
        let ratio_basis = layout.ratio_basis();
        let mean_units = unit_bases(mean_basis);
        let ratio_units = unit_bases(ratio_basis);

        let mut breaks = vec![eps];
        breaks.extend(layout.times().iter().copied().filter(|t| *t > eps && *t < 1.0 - eps));
        breaks.push(1.0 - eps);
        let window = 1.0 - 2.0 * eps;

        let mut hm = DMatrix::<f64>::zeros(k, k);
        let mut hs = DMatrix::<f64>::zeros(k, k);
        const SUB: usize = 16;
        for seg in breaks.windows(2) {
            let h = (seg[1] - seg[0]) / SUB as f64;
            for s in 0..SUB {
                let mid = seg[0] + (s as f64 + 0.5) * h;
                for &(xi, wq) in &GAUSS5 {
                    let t = mid + 0.5 * h * xi;
                    let w = 0.5 * h * wq / window;
                    let (_, dm) = eval_all(mean_basis, &mean_units, t);
                    let (rv, rd) = eval_all(ratio_basis, &ratio_units, t);
                    let r = (t * (1.0 - t)).sqrt();
                    let phi: Vec<f64> = (1..=k).map(|i| r * rd[i] + (1.0 - t) / r * rv[i]).collect();
                    for a in 0..k {
                        for b in 0..k {
                            hm[(a, b)] += w * dm[a + 1] * dm[b + 1];
                            hs[(a, b)] += w * phi[a] * phi[b];
                        }
                    }
                }
            }
        }
        KineticMetric {
            mean: regularized_cholesky(hm),
            ratio: regularized_cholesky(hs),
        }
    }

    /// Replaces the mean-knot gradient (`K × d`, row-major) by `H⁻¹ g`
    /// applied per coordinate.
    pub(crate) fn apply_mean(&self, grad: &mut [f64], dim: usize) {
        let k = grad.len() / dim;
        let mut col = DMatrix::<f64>::zeros(k, dim);
        for i in 0..k {
            for c in 0..dim {
                col[(i, c)] = grad[i * dim + c];
            }
        }
        self.mean.solve_mut(&mut col);
        for i in 0..k {
            for c in 0..dim {
                grad[i * dim + c] = col[(i, c)];
            }
        }
    }

    /// `H⁻¹ g / d` for the ratio-node gradient.
    pub(crate) fn apply_ratio(&self, grad: &mut [f64], dim: usize) {
        let mut v = DMatrix::from_column_slice(grad.len(), 1, grad);
        self.ratio.solve_mut(&mut v);
        for (g, s) in grad.iter_mut().zip(v.iter()) {
            *g = s / dim as f64;
        }
    }
}
