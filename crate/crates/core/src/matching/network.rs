use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{GsbmError, Result};
use rand::Rng as _;

/// Architecture of the residual time-conditioned network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub time_frequencies: usize,
}

impl NetConfig {
    pub fn new(input_dim: usize, output_dim: usize, hidden: usize) -> Self {
        NetConfig {
            input_dim,
            output_dim,
            hidden,
            blocks: 4,
            time_frequencies: 32,
        }
    }

    fn embed_dim(&self) -> usize {
        2 * self.time_frequencies
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden == 0 || self.time_frequencies == 0 {
            return Err(GsbmError::Config("network dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Dense layer `y = x W + b` with `W` stored `in × out`, row-major.
#[derive(Debug, Clone, Copy)]
struct Dense {
    rows: usize,
    cols: usize,
    w: usize,
    b: usize,
}

impl Dense {
    fn size(&self) -> usize {
        self.rows * self.cols + self.cols
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    inner: Dense,
    time: Dense,
    outer: Dense,
}

#[derive(Debug, Clone)]
struct Layout {
    input: Dense,
    blocks: Vec<Block>,
    output: Dense,
    total: usize,
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let mut offset = 0;
        let mut dense = |rows: usize, cols: usize| {
            let d = Dense {
                rows,
                cols,
                w: offset,
                b: offset + rows * cols,
            };
            offset += d.size();
            d
        };
        let h = cfg.hidden;
        let input = dense(cfg.input_dim + cfg.embed_dim(), h);
        let blocks = (0..cfg.blocks)
            .map(|_| Block {
                inner: dense(h, h),
                time: dense(cfg.embed_dim(), h),
                outer: dense(h, h),
            })
            .collect();
        let output = dense(h, cfg.output_dim);
        Layout {
            input,
            blocks,
            output,
            total: offset,
        }
    }
}

/// A direction in `(x, t)` space pushed forward as a tangent channel.
#[derive(Debug, Clone, PartialEq)]
pub enum Tangent {
    /// Coordinate direction `e_i` in state space.
    Axis(usize),
    /// The time direction.
    Time,
    /// Per-sample state directions, `batch × input_dim` row-major.
    Probe(Vec<f64>),
}

/// Which derivative channels to propagate alongside the values.
///
/// Channel 0 is the value; channels `1..=tangents.len()` are first
/// directional derivatives; each entry of `second` adds a channel holding
/// the second directional derivative along that tangent (0-based index).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JetSpec {
    pub tangents: Vec<Tangent>,
    pub second: Vec<usize>,
}

impl JetSpec {
    pub fn value_only() -> Self {
        JetSpec::default()
    }

    pub fn channels(&self) -> usize {
        1 + self.tangents.len() + self.second.len()
    }
}

/// Network outputs for every channel, `channels × batch × output_dim`.
#[derive(Debug, Clone)]
pub struct JetOutput {
    pub batch: usize,
    pub output_dim: usize,
    pub data: Vec<f64>,
}

impl JetOutput {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.batch * self.output_dim;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Intermediate jets kept for the reverse pass.
#[derive(Debug)]
pub struct Tape {
    batch: usize,
    channels: usize,
    pairs: Vec<usize>,
    input: Vec<f64>,
    embed: Vec<f64>,
    /// Pre-activations and activations in evaluation order.
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Residual MLP with SiLU activations and a sinusoidal time embedding fed
/// to the input layer and to every block.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetConfig,
    layout: Layout,
    params: Vec<f64>,
    freqs: Vec<f64>,
}

fn frequencies(n: usize) -> Vec<f64> {
    let (lo, hi) = (0.5f64.ln(), 50.0f64.ln());
    (0..n)
        .map(|k| {
            let f = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
            (lo + (hi - lo) * f).exp()
        })
        .collect()
}

#[inline]
fn sig(z: f64) -> f64 {
    crate::numerics::sigmoid(z)
}

/// SiLU and its first three derivatives.
#[inline]
fn silu_derivs(z: f64) -> (f64, f64, f64, f64) {
    let s = sig(z);
    let ds = s * (1.0 - s);
    let q = 1.0 - 2.0 * s;
    let f0 = z * s;
    let f1 = s + z * ds;
    let f2 = ds * (2.0 + z * q);
    let f3 = ds * q * (2.0 + z * q) + ds * q - 2.0 * z * ds * ds;
    (f0, f1, f2, f3)
}

/// `c = alpha · op(a) · op(b) + beta · c` for row-major matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], trans_a: bool, b: &[f64], trans_b: bool, c: &mut [f64], beta: f64) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Network {
    pub fn new(cfg: NetConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut params = vec![0.0; layout.total];
        let mut init = |d: &Dense, gain: f64| {
            let a = gain * (3.0 / d.rows as f64).sqrt();
            for w in &mut params[d.w..d.w + d.rows * d.cols] {
                *w = rng.gen_range(-a..a);
            }
        };
        init(&layout.input, 1.0);
        for b in &layout.blocks {
            init(&b.inner, 1.0);
            init(&b.time, 1.0);
            init(&b.outer, 0.1);
        }
        init(&layout.output, 0.1);
        let freqs = frequencies(cfg.time_frequencies);
        Ok(Network {
            cfg,
            layout,
            params,
            freqs,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn from_params(cfg: NetConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.total {
            return Err(GsbmError::Contract(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        let freqs = frequencies(cfg.time_frequencies);
        Ok(Network {
            cfg,
            layout,
            params,
            freqs,
        })
    }

    /// Sets the parameters so that the scalar output is `⟨b, x⟩ + c`
    /// (SiLU is the identity to machine precision far right of zero).
    #[cfg(test)]
    pub(crate) fn set_affine_potential(&mut self, b: &[f64], c: f64) {
        assert_eq!(self.cfg.output_dim, 1);
        self.params.iter_mut().for_each(|p| *p = 0.0);
        let shift = 100.0;
        let inp = self.layout.input;
        for (i, bi) in b.iter().enumerate() {
            self.params[inp.w + i * inp.cols] = *bi;
        }
        self.params[inp.b] = shift;
        let out = self.layout.output;
        self.params[out.w] = 1.0;
        self.params[out.b] = c - shift;
    }

    /// Adds `c` to the value output of every channel-0 row.
    #[cfg(test)]
    pub(crate) fn shift_output(&mut self, c: f64) {
        let out = self.layout.output;
        for p in &mut self.params[out.b..out.b + out.cols] {
            *p += c;
        }
    }

    fn input_jets(&self, x: &[f64], t: &[f64], spec: &JetSpec) -> (Vec<f64>, Vec<f64>) {
        let b = t.len();
        let d = self.cfg.input_dim;
        let e = self.cfg.embed_dim();
        let nf = self.cfg.time_frequencies;
        let w = d + e;
        let c_total = spec.channels();
        let mut input = vec![0.0; c_total * b * w];
        let mut embed = vec![0.0; c_total * b * e];
        let emb_row = |out: &mut [f64], t: f64, order: usize, scale: f64| {
            for (k, &om) in self.freqs.iter().enumerate() {
                let (s, c) = (om * t).sin_cos();
                let (vs, vc) = match order {
                    0 => (s, c),
                    1 => (om * c, -om * s),
                    _ => (-om * om * s, -om * om * c),
                };
                out[k] = scale * vs;
                out[nf + k] = scale * vc;
            }
        };
        for i in 0..b {
            let row = &mut input[i * w..(i + 1) * w];
            row[..d].copy_from_slice(&x[i * d..(i + 1) * d]);
            emb_row(&mut row[d..], t[i], 0, 1.0);
            embed[i * e..(i + 1) * e].copy_from_slice(&input[i * w + d..(i + 1) * w]);
        }
        let time_scale = |dir: &Tangent| if matches!(dir, Tangent::Time) { 1.0 } else { 0.0 };
        for (c, dir) in spec.tangents.iter().enumerate() {
            let ch = 1 + c;
            for i in 0..b {
                let row = &mut input[(ch * b + i) * w..(ch * b + i + 1) * w];
                match dir {
                    Tangent::Axis(a) => row[*a] = 1.0,
                    Tangent::Time => emb_row(&mut row[d..], t[i], 1, 1.0),
                    Tangent::Probe(v) => row[..d].copy_from_slice(&v[i * d..(i + 1) * d]),
                }
                let er = (ch * b + i) * e;
                let src = row[d..].to_vec();
                embed[er..er + e].copy_from_slice(&src);
            }
        }
        for (j, &p) in spec.second.iter().enumerate() {
            let ch = 1 + spec.tangents.len() + j;
            let ts = time_scale(&spec.tangents[p]);
            if ts == 0.0 {
                continue;
            }
            for i in 0..b {
                let row = &mut input[(ch * b + i) * w..(ch * b + i + 1) * w];
                emb_row(&mut row[d..], t[i], 2, ts);
                let er = (ch * b + i) * e;
                let src = row[d..].to_vec();
                embed[er..er + e].copy_from_slice(&src);
            }
        }
        (input, embed)
    }

    fn dense_forward(&self, d: &Dense, x: &[f64], rows: usize, value_rows: usize, out: &mut [f64], accumulate: bool) {
        gemm(
            rows,
            d.rows,
            d.cols,
            x,
            false,
            &self.params[d.w..d.w + d.rows * d.cols],
            false,
            out,
            if accumulate { 1.0 } else { 0.0 },
        );
        let bias = &self.params[d.b..d.b + d.cols];
        for r in 0..value_rows {
            for (o, bv) in out[r * d.cols..(r + 1) * d.cols].iter_mut().zip(bias) {
                *o += bv;
            }
        }
    }

    fn dense_backward(&self, d: &Dense, x: &[f64], gy: &[f64], rows: usize, value_rows: usize, grad: &mut [f64], gx: Option<&mut [f64]>) {
        gemm(d.rows, rows, d.cols, x, true, gy, false, &mut grad[d.w..d.w + d.rows * d.cols], 1.0);
        let gb = &mut grad[d.b..d.b + d.cols];
        for r in 0..value_rows {
            for (g, v) in gb.iter_mut().zip(&gy[r * d.cols..(r + 1) * d.cols]) {
                *g += v;
            }
        }
        if let Some(gx) = gx {
            gemm(
                rows,
                d.cols,
                d.rows,
                gy,
                false,
                &self.params[d.w..d.w + d.rows * d.cols],
                true,
                gx,
                0.0,
            );
        }
    }

    fn activate(z: &[f64], b: usize, width: usize, n_tan: usize, pairs: &[usize]) -> Vec<f64> {
        let mut a = vec![0.0; z.len()];
        let blk = b * width;
        for idx in 0..blk {
            let (f0, f1, f2, _) = silu_derivs(z[idx]);
            a[idx] = f0;
            for c in 1..=n_tan {
                a[c * blk + idx] = f1 * z[c * blk + idx];
            }
            for (j, &p) in pairs.iter().enumerate() {
                let ch = 1 + n_tan + j;
                let zp = z[(1 + p) * blk + idx];
                a[ch * blk + idx] = f2 * zp * zp + f1 * z[ch * blk + idx];
            }
        }
        a
    }

    fn activate_backward(z: &[f64], ga: &[f64], b: usize, width: usize, n_tan: usize, pairs: &[usize]) -> Vec<f64> {
        let mut gz = vec![0.0; z.len()];
        let blk = b * width;
        for idx in 0..blk {
            let (_, f1, f2, f3) = silu_derivs(z[idx]);
            let mut g0 = ga[idx] * f1;
            for c in 1..=n_tan {
                let zc = z[c * blk + idx];
                let gc = ga[c * blk + idx];
                g0 += gc * f2 * zc;
                gz[c * blk + idx] += gc * f1;
            }
            for (j, &p) in pairs.iter().enumerate() {
                let ch = 1 + n_tan + j;
                let zp = z[(1 + p) * blk + idx];
                let zs = z[ch * blk + idx];
                let gs = ga[ch * blk + idx];
                g0 += gs * (f3 * zp * zp + f2 * zs);
                gz[(1 + p) * blk + idx] += gs * 2.0 * f2 * zp;
                gz[ch * blk + idx] += gs * f1;
            }
            gz[idx] = g0;
        }
        gz
    }

    /// Evaluates all channels of `spec` at states `x` (`batch × input_dim`)
    /// and times `t`.
    pub fn forward(&self, x: &[f64], t: &[f64], spec: &JetSpec) -> (JetOutput, Tape) {
        let b = t.len();
        debug_assert_eq!(x.len(), b * self.cfg.input_dim);
        let c_total = spec.channels();
        let rows = c_total * b;
        let h = self.cfg.hidden;
        let n_tan = spec.tangents.len();
        let (input, embed) = self.input_jets(x, t, spec);

        let mut pre = Vec::new();
        let mut post = Vec::new();
        let mut hid = vec![0.0; rows * h];
        self.dense_forward(&self.layout.input, &input, rows, b, &mut hid, false);
        for blk in &self.layout.blocks {
            let a1 = Self::activate(&hid, b, h, n_tan, &spec.second);
            let mut z1 = vec![0.0; rows * h];
            self.dense_forward(&blk.inner, &a1, rows, b, &mut z1, false);
            self.dense_forward(&blk.time, &embed, rows, 0, &mut z1, true);
            let a2 = Self::activate(&z1, b, h, n_tan, &spec.second);
            let mut z2 = vec![0.0; rows * h];
            self.dense_forward(&blk.outer, &a2, rows, b, &mut z2, false);
            pre.push(hid.clone());
            post.push(a1);
            pre.push(z1);
            post.push(a2);
            for (hv, zv) in hid.iter_mut().zip(&z2) {
                *hv += zv;
            }
        }
        let a = Self::activate(&hid, b, h, n_tan, &spec.second);
        let mut out = vec![0.0; rows * self.cfg.output_dim];
        self.dense_forward(&self.layout.output, &a, rows, b, &mut out, false);
        pre.push(hid);
        post.push(a);
        (
            JetOutput {
                batch: b,
                output_dim: self.cfg.output_dim,
                data: out,
            },
            Tape {
                batch: b,
                channels: c_total,
                pairs: spec.second.clone(),
                input,
                embed,
                pre,
                post,
            },
        )
    }

    /// Values only.
    pub fn eval(&self, x: &[f64], t: &[f64]) -> Vec<f64> {
        self.forward(x, t, &JetSpec::value_only()).0.data
    }

    /// Parameter gradient of `Σ g_out · out` over all channels.
    pub fn backward(&self, tape: &Tape, g_out: &[f64]) -> Vec<f64> {
        let b = tape.batch;
        let rows = tape.channels * b;
        let h = self.cfg.hidden;
        let n_tan = tape.channels - 1 - tape.pairs.len();
        let mut grad = vec![0.0; self.params.len()];
        let nb = self.layout.blocks.len();

        let mut ga = vec![0.0; rows * h];
        self.dense_backward(&self.layout.output, &tape.post[2 * nb], g_out, rows, b, &mut grad, Some(&mut ga));
        let mut gh = Self::activate_backward(&tape.pre[2 * nb], &ga, b, h, n_tan, &tape.pairs);

        for (i, blk) in self.layout.blocks.iter().enumerate().rev() {
            let (h_in, a1) = (&tape.pre[2 * i], &tape.post[2 * i]);
            let (z1, a2) = (&tape.pre[2 * i + 1], &tape.post[2 * i + 1]);
            // residual: gh flows to both the skip and the block output z2
            let mut ga2 = vec![0.0; rows * h];
            self.dense_backward(&blk.outer, a2, &gh, rows, b, &mut grad, Some(&mut ga2));
            let gz1 = Self::activate_backward(z1, &ga2, b, h, n_tan, &tape.pairs);
            self.dense_backward(&blk.time, &tape.embed, &gz1, rows, 0, &mut grad, None);
            let mut ga1 = vec![0.0; rows * h];
            self.dense_backward(&blk.inner, a1, &gz1, rows, b, &mut grad, Some(&mut ga1));
            let gh_block = Self::activate_backward(h_in, &ga1, b, h, n_tan, &tape.pairs);
            for (g, v) in gh.iter_mut().zip(&gh_block) {
                *g += v;
            }
        }
        self.dense_backward(&self.layout.input, &tape.input, &gh, rows, b, &mut grad, None);
        grad
    }
}
