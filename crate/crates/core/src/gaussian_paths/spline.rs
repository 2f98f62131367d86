//! Natural cubic splines written as a linear map of their node values.
//!
//! Second derivatives at the nodes are `Q · values` for a fixed matrix `Q`
//! that depends on the node positions only, so one basis is shared by every
//! path that uses the same knot times and gradients with respect to node
//! values are a transpose product.

/// Which behaviour to use outside `[nodes[0], nodes[n-1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extrapolation {
    /// Evaluation outside the node range is a caller error (clamped).
    Clamp,
    /// Continue with the end slope (natural boundary: zero curvature).
    Linear,
}

#[derive(Debug, Clone)]
pub struct SplineBasis {
    nodes: Vec<f64>,
    /// Row-major `n × n`.
    q: Vec<f64>,
    extrapolation: Extrapolation,
}

/// Local coefficients of one evaluation: value and slope are both
/// `cy0*y[j] + cy1*y[j+1] + cm0*M[j] + cm1*M[j+1]`.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub j: usize,
    pub val: [f64; 4],
    pub der: [f64; 4],
}

impl SplineBasis {
    pub fn natural(nodes: Vec<f64>, extrapolation: Extrapolation) -> Self {
        let n = nodes.len();
        assert!(n >= 1, "spline needs at least one node");
        assert!(nodes.windows(2).all(|w| w[1] > w[0]), "spline nodes must increase");
        let mut q = vec![0.0; n * n];
        if n >= 3 {
            let m = n - 2;
            let h: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
            // Tridiagonal system A·M_int = B·y, solved column by column (Thomas).
            let sub: Vec<f64> = (0..m).map(|i| h[i]).collect();
            let diag: Vec<f64> = (0..m).map(|i| 2.0 * (h[i] + h[i + 1])).collect();
            let sup: Vec<f64> = (0..m).map(|i| h[i + 1]).collect();
            let mut cp = vec![0.0; m];
            let mut denom = vec![0.0; m];
            for i in 0..m {
                let d = diag[i] - if i > 0 { sub[i] * cp[i - 1] } else { 0.0 };
                denom[i] = d;
                cp[i] = sup[i] / d;
            }
            for col in 0..n {
                let mut rhs = vec![0.0; m];
                for (i, r) in rhs.iter_mut().enumerate() {
                    // row i corresponds to node i+1
                    let k = i + 1;
                    let mut b = 0.0;
                    if col == k + 1 {
                        b += 6.0 / h[k];
                    }
                    if col == k {
                        b -= 6.0 / h[k] + 6.0 / h[k - 1];
                    }
                    if col + 1 == k {
                        b += 6.0 / h[k - 1];
                    }
                    *r = b;
                }
                let mut dp = vec![0.0; m];
                for i in 0..m {
                    let prev = if i > 0 { sub[i] * dp[i - 1] } else { 0.0 };
                    dp[i] = (rhs[i] - prev) / denom[i];
                }
                for i in (0..m).rev() {
                    let next = if i + 1 < m { cp[i] * dp[i + 1] } else { 0.0 };
                    dp[i] -= next;
                }
                for i in 0..m {
                    q[(i + 1) * n + col] = dp[i];
                }
            }
        }
        SplineBasis {
            nodes,
            q,
            extrapolation,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Second derivatives at the nodes for `dim`-dimensional node values
    /// (row-major `n × dim`).
    pub fn second_derivatives(&self, values: &[f64], dim: usize) -> Vec<f64> {
        let n = self.len();
        debug_assert_eq!(values.len(), n * dim);
        let mut m2 = vec![0.0; n * dim];
        for i in 1..n.saturating_sub(1) {
            let row = &self.q[i * n..(i + 1) * n];
            let out = &mut m2[i * dim..(i + 1) * dim];
            for (k, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    let y = &values[k * dim..(k + 1) * dim];
                    for (o, v) in out.iter_mut().zip(y) {
                        *o += w * v;
                    }
                }
            }
        }
        m2
    }

    /// Adds `Qᵀ · grad_m2` into `grad_values`.
    pub fn pull_back_second_derivatives(&self, grad_m2: &[f64], dim: usize, grad_values: &mut [f64]) {
        let n = self.len();
        for i in 1..n.saturating_sub(1) {
            let g = &grad_m2[i * dim..(i + 1) * dim];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let row = &self.q[i * n..(i + 1) * n];
            for (k, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    let out = &mut grad_values[k * dim..(k + 1) * dim];
                    for (o, v) in out.iter_mut().zip(g) {
                        *o += w * v;
                    }
                }
            }
        }
    }

    pub fn stencil(&self, t: f64) -> Stencil {
        let n = self.len();
        if n == 1 {
            return Stencil {
                j: 0,
                val: [1.0, 0.0, 0.0, 0.0],
                der: [0.0; 4],
            };
        }
        let first = self.nodes[0];
        let last = self.nodes[n - 1];
        if self.extrapolation == Extrapolation::Linear && t < first {
            let h = self.nodes[1] - first;
            // slope at node 0 with M_0 = 0
            let der = [-1.0 / h, 1.0 / h, -h / 3.0, -h / 6.0];
            let dt = t - first;
            let val = [1.0 + der[0] * dt, der[1] * dt, der[2] * dt, der[3] * dt];
            return Stencil { j: 0, val, der };
        }
        if self.extrapolation == Extrapolation::Linear && t > last {
            let h = last - self.nodes[n - 2];
            let der = [-1.0 / h, 1.0 / h, h / 6.0, h / 3.0];
            let dt = t - last;
            let val = [der[0] * dt, 1.0 + der[1] * dt, der[2] * dt, der[3] * dt];
            return Stencil { j: n - 2, val, der };
        }
        let t = t.clamp(first, last);
        let j = match self.nodes.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => (i - 1).min(n - 2),
        };
        let h = self.nodes[j + 1] - self.nodes[j];
        let a = (self.nodes[j + 1] - t) / h;
        let b = 1.0 - a;
        let h26 = h * h / 6.0;
        Stencil {
            j,
            val: [a, b, (a * a * a - a) * h26, (b * b * b - b) * h26],
            der: [-1.0 / h, 1.0 / h, -(3.0 * a * a - 1.0) * h / 6.0, (3.0 * b * b - 1.0) * h / 6.0],
        }
    }

    /// Evaluates value and slope into `val`/`der` (each of length `dim`).
    pub fn eval_into(&self, st: &Stencil, values: &[f64], m2: &[f64], dim: usize, val: &mut [f64], der: &mut [f64]) {
        let j = st.j;
        let n = self.len();
        for c in 0..dim {
            let y0 = values[j * dim + c];
            let (y1, m0, m1) = if n == 1 {
                (0.0, 0.0, 0.0)
            } else {
                (values[(j + 1) * dim + c], m2[j * dim + c], m2[(j + 1) * dim + c])
            };
            val[c] = st.val[0] * y0 + st.val[1] * y1 + st.val[2] * m0 + st.val[3] * m1;
            der[c] = st.der[0] * y0 + st.der[1] * y1 + st.der[2] * m0 + st.der[3] * m1;
        }
    }

    /// Accumulates gradients of an evaluation into node-value and
    /// second-derivative gradient buffers.
    pub fn backprop(&self, st: &Stencil, g_val: &[f64], g_der: &[f64], dim: usize, grad_values: &mut [f64], grad_m2: &mut [f64]) {
        let j = st.j;
        let n = self.len();
        for c in 0..dim {
            let gv = g_val[c];
            let gd = g_der[c];
            grad_values[j * dim + c] += st.val[0] * gv + st.der[0] * gd;
            if n > 1 {
                grad_values[(j + 1) * dim + c] += st.val[1] * gv + st.der[1] * gd;
                grad_m2[j * dim + c] += st.val[2] * gv + st.der[2] * gd;
                grad_m2[(j + 1) * dim + c] += st.val[3] * gv + st.der[3] * gd;
            }
        }
    }
}
