//! Three conv blocks (conv k=5 → batch-norm → ReLU → avg-pool 2), then
//! Linear → GELU → Linear to one logit. Forward and backward passes are
//! written out by hand; convolutions run as im2col + GEMM.
//!
//! Activations are kept channel-major as `[channels, batch·length]` so each
//! convolution is one matrix product and batch-norm statistics are row
//! reductions.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayView3, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::CnnConfig;
use crate::error::{Error, Result};
use crate::io::tensor::{read_all, Cursor};

pub const CHANNELS: [usize; 3] = [16, 32, 64];
pub const KERNEL: usize = 5;
pub const PAD: usize = 2;
pub const HIDDEN: usize = 128;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const MODEL_MAGIC: &[u8; 4] = b"CFQN";
const VERSION: u32 = 1;
const ADAM_EPS: f64 = 1e-8;
const PREDICT_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm.
    Train,
    /// Running statistics in batch-norm.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnArch {
    pub in_channels: usize,
    pub input_len: usize,
}

impl CnnArch {
    pub fn new(in_channels: usize, input_len: usize) -> Result<Self> {
        if in_channels == 0 || input_len < 8 {
            return Err(Error::invalid(format!(
                "CNN needs ≥ 1 input channel and length ≥ 8 (got {in_channels} × {input_len})"
            )));
        }
        Ok(Self {
            in_channels,
            input_len,
        })
    }

    /// Input length of each block, then the pooled output length.
    fn lens(&self) -> [usize; 4] {
        let l = self.input_len;
        [l, l / 2, l / 4, l / 8]
    }

    pub fn flat_len(&self) -> usize {
        CHANNELS[2] * self.lens()[3]
    }

    fn block_in(&self, i: usize) -> usize {
        if i == 0 {
            self.in_channels
        } else {
            CHANNELS[i - 1]
        }
    }

    /// Trainable tensors in storage order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for i in 0..3 {
            let (cin, cout) = (self.block_in(i), CHANNELS[i]);
            v.push((format!("conv{}.weight", i + 1), vec![cout, cin, KERNEL]));
            v.push((format!("conv{}.bias", i + 1), vec![cout]));
            v.push((format!("bn{}.weight", i + 1), vec![cout]));
            v.push((format!("bn{}.bias", i + 1), vec![cout]));
        }
        v.push(("fc1.weight".into(), vec![HIDDEN, self.flat_len()]));
        v.push(("fc1.bias".into(), vec![HIDDEN]));
        v.push(("fc2.weight".into(), vec![1, HIDDEN]));
        v.push(("fc2.bias".into(), vec![1]));
        v
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> Vec<(String, Vec<usize>)> {
        (0..3)
            .flat_map(|i| {
                [
                    (format!("bn{}.running_mean", i + 1), vec![CHANNELS[i]]),
                    (format!("bn{}.running_var", i + 1), vec![CHANNELS[i]]),
                ]
            })
            .collect()
    }

    /// Trainable parameters per layer: conv1, bn1, conv2, bn2, conv3, bn3, fc1, fc2.
    pub fn layer_param_counts(&self) -> Vec<(String, usize)> {
        let t = self.tensors();
        let size = |k: usize| t[k].1.iter().product::<usize>();
        let mut out = Vec::new();
        for i in 0..3 {
            out.push((format!("conv{}", i + 1), size(4 * i) + size(4 * i + 1)));
            out.push((format!("bn{}", i + 1), size(4 * i + 2) + size(4 * i + 3)));
        }
        out.push(("fc1".into(), size(12) + size(13)));
        out.push(("fc2".into(), size(14) + size(15)));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

fn offsets(specs: &[(String, Vec<usize>)]) -> Vec<Range<usize>> {
    let mut at = 0;
    specs
        .iter()
        .map(|(_, s)| {
            let n: usize = s.iter().product();
            at += n;
            at - n..at
        })
        .collect()
}

// Tensor indices in `CnnArch::tensors`.
const fn conv_w(i: usize) -> usize {
    4 * i
}
const fn conv_b(i: usize) -> usize {
    4 * i + 1
}
const fn bn_g(i: usize) -> usize {
    4 * i + 2
}
const fn bn_b(i: usize) -> usize {
    4 * i + 3
}
const FC1_W: usize = 12;
const FC1_B: usize = 13;
const FC2_W: usize = 14;
const FC2_B: usize = 15;

#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    pub kind: String,
    arch: CnnArch,
    params: Vec<f64>,
    buffers: Vec<f64>,
    p_ranges: Vec<Range<usize>>,
    b_ranges: Vec<Range<usize>>,
}

struct BlockCache {
    cols: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
    /// Post-ReLU activations before pooling.
    act: Array2<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

struct Cache {
    batch: usize,
    blocks: Vec<BlockCache>,
    flat: Array2<f64>,
    z: Array2<f64>,
    h: Array2<f64>,
}

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

fn gelu_grad(z: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + z * pdf
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits, and its gradient w.r.t. each logit.
pub fn bce_with_logits(logits: &[f64], y: &[u8]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let loss = logits
        .iter()
        .zip(y)
        .map(|(&z, &t)| z.max(0.0) + (-z.abs()).exp().ln_1p() - t as f64 * z)
        .sum::<f64>()
        / n;
    let grad = logits.iter().zip(y).map(|(&z, &t)| (sigmoid(z) - t as f64) / n).collect();
    (loss, grad)
}

fn im2col(x: &Array2<f64>, batch: usize, len: usize) -> Array2<f64> {
    let cin = x.nrows();
    let mut cols = Array2::zeros((cin * KERNEL, batch * len));
    for c in 0..cin {
        let xs = x.row(c);
        let xs = xs.as_slice().expect("contiguous");
        for k in 0..KERNEL {
            let mut row = cols.row_mut(c * KERNEL + k);
            let rs = row.as_slice_mut().expect("contiguous");
            let shift = k as isize - PAD as isize;
            for b in 0..batch {
                let src = &xs[b * len..(b + 1) * len];
                let dst = &mut rs[b * len..(b + 1) * len];
                if shift >= 0 {
                    let s = (shift as usize).min(len);
                    dst[..len - s].copy_from_slice(&src[s..]);
                } else {
                    let s = ((-shift) as usize).min(len);
                    dst[s..].copy_from_slice(&src[..len - s]);
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, cin: usize, batch: usize, len: usize) -> Array2<f64> {
    let mut dx = Array2::zeros((cin, batch * len));
    for c in 0..cin {
        let mut out = dx.row_mut(c);
        let os = out.as_slice_mut().expect("contiguous");
        for k in 0..KERNEL {
            let row = dcols.row(c * KERNEL + k);
            let rs = row.as_slice().expect("contiguous");
            let shift = k as isize - PAD as isize;
            for b in 0..batch {
                let src = &rs[b * len..(b + 1) * len];
                let dst = &mut os[b * len..(b + 1) * len];
                if shift >= 0 {
                    let s = (shift as usize).min(len);
                    for (d, v) in dst[s..].iter_mut().zip(&src[..len - s]) {
                        *d += v;
                    }
                } else {
                    let s = ((-shift) as usize).min(len);
                    for (d, v) in dst[..len - s].iter_mut().zip(&src[s..]) {
                        *d += v;
                    }
                }
            }
        }
    }
    dx
}

fn avg_pool(act: &Array2<f64>, batch: usize, len: usize) -> Array2<f64> {
    let half = len / 2;
    let mut out = Array2::zeros((act.nrows(), batch * half));
    for (a, mut o) in act.outer_iter().zip(out.outer_iter_mut()) {
        for b in 0..batch {
            for t in 0..half {
                o[b * half + t] = 0.5 * (a[b * len + 2 * t] + a[b * len + 2 * t + 1]);
            }
        }
    }
    out
}

impl CnnModel {
    /// Fresh model; conv and linear layers draw weights and biases from
    /// U(±1/√fan_in), batch-norm starts at γ = 1, β = 0.
    pub fn new(arch: CnnArch, kind: &str, seed: u64) -> Self {
        let specs = arch.tensors();
        let p_ranges = offsets(&specs);
        let b_ranges = offsets(&arch.buffers());
        let mut params = vec![0.0; p_ranges.last().unwrap().end];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = |i: usize| match i {
            FC1_W | FC1_B => arch.flat_len(),
            FC2_W | FC2_B => HIDDEN,
            _ => arch.block_in(i / 4) * KERNEL,
        };
        for (i, r) in p_ranges.iter().enumerate() {
            let is_bn = i < 12 && (i % 4 == 2 || i % 4 == 3);
            if is_bn {
                let v = if i % 4 == 2 { 1.0 } else { 0.0 };
                params[r.clone()].fill(v);
            } else {
                let bound = 1.0 / (fan_in(i) as f64).sqrt();
                for p in &mut params[r.clone()] {
                    *p = rng.random_range(-bound..bound);
                }
            }
        }
        let mut buffers = vec![0.0; b_ranges.last().unwrap().end];
        for i in 0..3 {
            buffers[b_ranges[2 * i + 1].clone()].fill(1.0);
        }
        Self {
            kind: kind.to_string(),
            arch,
            params,
            buffers,
            p_ranges,
            b_ranges,
        }
    }

    pub fn arch(&self) -> CnnArch {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[f64] {
        &self.buffers
    }

    /// Name and index range of each trainable tensor.
    pub fn param_tensors(&self) -> Vec<(String, Range<usize>)> {
        self.arch
            .tensors()
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.p_ranges.iter().cloned())
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Round weights and statistics to f32 precision, as stored on disk.
    pub fn quantize_f32(&mut self) {
        for v in self.params.iter_mut().chain(self.buffers.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.params[self.p_ranges[i].clone()]
    }

    fn conv_weight(&self, i: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((CHANNELS[i], self.arch.block_in(i) * KERNEL), self.p(conv_w(i))).expect("shape")
    }

    fn check_input(&self, x: &ArrayView3<f64>) -> Result<()> {
        let (_, c, l) = x.dim();
        if c != self.arch.in_channels || l != self.arch.input_len {
            return Err(Error::invalid(format!(
                "CNN expects inputs of {} × {}, got {c} × {l}",
                self.arch.in_channels, self.arch.input_len
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("CNN input contains non-finite values"));
        }
        Ok(())
    }

    /// Gather examples `idx` of `x` into the `[channels, batch·length]` layout.
    fn gather(&self, x: &ArrayView3<f64>, idx: &[usize]) -> Array2<f64> {
        let l = self.arch.input_len;
        let mut out = Array2::zeros((self.arch.in_channels, idx.len() * l));
        for (b, &i) in idx.iter().enumerate() {
            for c in 0..self.arch.in_channels {
                out.row_mut(c)
                    .slice_mut(ndarray::s![b * l..(b + 1) * l])
                    .assign(&x.slice(ndarray::s![i, c, ..]));
            }
        }
        out
    }

    fn forward(&self, mut x: Array2<f64>, batch: usize, mode: Mode) -> (Vec<f64>, Cache) {
        let lens = self.arch.lens();
        let mut blocks = Vec::with_capacity(3);
        for i in 0..3 {
            let len = lens[i];
            let cols = im2col(&x, batch, len);
            let mut y = Array2::zeros((CHANNELS[i], batch * len));
            general_mat_mul(1.0, &self.conv_weight(i), &cols, 0.0, &mut y);
            let (bias, gamma, beta) = (self.p(conv_b(i)), self.p(bn_g(i)), self.p(bn_b(i)));
            let n = (batch * len) as f64;
            let (mut mean, mut var) = (vec![0.0; CHANNELS[i]], vec![0.0; CHANNELS[i]]);
            let mut inv_std = vec![0.0; CHANNELS[i]];
            let mut xhat = Array2::zeros(y.dim());
            let mut act = Array2::zeros(y.dim());
            for c in 0..CHANNELS[i] {
                let mut row = y.row_mut(c);
                row += bias[c];
                let (m, v) = match mode {
                    Mode::Train => {
                        let m = row.sum() / n;
                        (m, row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
                    }
                    Mode::Eval => (
                        self.buffers[self.b_ranges[2 * i].clone()][c],
                        self.buffers[self.b_ranges[2 * i + 1].clone()][c],
                    ),
                };
                let is = 1.0 / (v + BN_EPS).sqrt();
                mean[c] = m;
                var[c] = v;
                inv_std[c] = is;
                let (mut xh, mut a) = (xhat.row_mut(c), act.row_mut(c));
                for ((xv, av), &yv) in xh.iter_mut().zip(a.iter_mut()).zip(row.iter()) {
                    *xv = (yv - m) * is;
                    *av = (gamma[c] * *xv + beta[c]).max(0.0);
                }
            }
            x = avg_pool(&act, batch, len);
            blocks.push(BlockCache {
                cols,
                xhat,
                inv_std,
                act,
                mean,
                var,
            });
        }
        // Flatten in (channel, position) order per example.
        let p = lens[3];
        let flat_len = self.arch.flat_len();
        let mut flat = Array2::zeros((batch, flat_len));
        for c in 0..CHANNELS[2] {
            for b in 0..batch {
                flat.row_mut(b)
                    .slice_mut(ndarray::s![c * p..(c + 1) * p])
                    .assign(&x.row(c).slice(ndarray::s![b * p..(b + 1) * p]));
            }
        }
        let w1 = ArrayView2::from_shape((HIDDEN, flat_len), self.p(FC1_W)).expect("shape");
        let mut z = Array2::zeros((batch, HIDDEN));
        general_mat_mul(1.0, &flat, &w1.t(), 0.0, &mut z);
        z += &ndarray::aview1(self.p(FC1_B));
        let h = z.mapv(gelu);
        let w2 = self.p(FC2_W);
        let b2 = self.p(FC2_B)[0];
        let logits = h
            .outer_iter()
            .map(|r| r.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>() + b2)
            .collect();
        (
            logits,
            Cache {
                batch,
                blocks,
                flat,
                z,
                h,
            },
        )
    }

    /// Train-mode gradient of the loss given d(loss)/d(logit).
    fn backward(&self, cache: &Cache, dlogits: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let batch = cache.batch;
        let lens = self.arch.lens();
        let flat_len = self.arch.flat_len();

        let w2 = self.p(FC2_W).to_vec();
        {
            let g = &mut grad[self.p_ranges[FC2_W].clone()];
            for (b, h) in cache.h.outer_iter().enumerate() {
                for (gj, hj) in g.iter_mut().zip(h.iter()) {
                    *gj += dlogits[b] * hj;
                }
            }
        }
        grad[self.p_ranges[FC2_B].start] = dlogits.iter().sum();
        let dz = Array2::from_shape_fn((batch, HIDDEN), |(b, j)| {
            dlogits[b] * w2[j] * gelu_grad(cache.z[[b, j]])
        });
        {
            let mut dw1 = ArrayViewMut2::from_shape((HIDDEN, flat_len), &mut grad[self.p_ranges[FC1_W].clone()])
                .expect("shape");
            general_mat_mul(1.0, &dz.t(), &cache.flat, 0.0, &mut dw1);
        }
        {
            let db1 = dz.sum_axis(Axis(0));
            grad[self.p_ranges[FC1_B].clone()].copy_from_slice(db1.as_slice().unwrap());
        }
        let w1 = ArrayView2::from_shape((HIDDEN, flat_len), self.p(FC1_W)).expect("shape");
        let mut dflat = Array2::zeros((batch, flat_len));
        general_mat_mul(1.0, &dz, &w1, 0.0, &mut dflat);

        let p = lens[3];
        let mut dpool = Array2::zeros((CHANNELS[2], batch * p));
        for c in 0..CHANNELS[2] {
            for b in 0..batch {
                dpool
                    .row_mut(c)
                    .slice_mut(ndarray::s![b * p..(b + 1) * p])
                    .assign(&dflat.row(b).slice(ndarray::s![c * p..(c + 1) * p]));
            }
        }

        for i in (0..3).rev() {
            let len = lens[i];
            let half = len / 2;
            let blk = &cache.blocks[i];
            let gamma = self.p(bn_g(i)).to_vec();
            let n = (batch * len) as f64;
            let mut dconv = Array2::zeros((CHANNELS[i], batch * len));
            let (mut dgamma, mut dbeta) = (vec![0.0; CHANNELS[i]], vec![0.0; CHANNELS[i]]);
            for c in 0..CHANNELS[i] {
                // Pool, ReLU, affine: gradient w.r.t. x̂.
                let mut dxhat = vec![0.0; batch * len];
                let (act, xhat, dp) = (blk.act.row(c), blk.xhat.row(c), dpool.row(c));
                for b in 0..batch {
                    for t in 0..half {
                        let g = 0.5 * dp[b * half + t];
                        for q in [b * len + 2 * t, b * len + 2 * t + 1] {
                            if act[q] > 0.0 {
                                dgamma[c] += g * xhat[q];
                                dbeta[c] += g;
                                dxhat[q] = g * gamma[c];
                            }
                        }
                    }
                }
                let sum_d: f64 = dxhat.iter().sum();
                let sum_dx: f64 = dxhat.iter().zip(xhat.iter()).map(|(d, x)| d * x).sum();
                let k = blk.inv_std[c] / n;
                for ((o, &d), &xh) in dconv.row_mut(c).iter_mut().zip(&dxhat).zip(xhat.iter()) {
                    *o = k * (n * d - sum_d - xh * sum_dx);
                }
            }
            grad[self.p_ranges[bn_g(i)].clone()].copy_from_slice(&dgamma);
            grad[self.p_ranges[bn_b(i)].clone()].copy_from_slice(&dbeta);
            let db = dconv.sum_axis(Axis(1));
            grad[self.p_ranges[conv_b(i)].clone()].copy_from_slice(db.as_slice().unwrap());
            let cin = self.arch.block_in(i);
            {
                let mut dw = ArrayViewMut2::from_shape((CHANNELS[i], cin * KERNEL), &mut grad[self.p_ranges[conv_w(i)].clone()])
                    .expect("shape");
                general_mat_mul(1.0, &dconv, &blk.cols.t(), 0.0, &mut dw);
            }
            if i > 0 {
                let mut dcols = Array2::zeros((cin * KERNEL, batch * len));
                general_mat_mul(1.0, &self.conv_weight(i).t(), &dconv, 0.0, &mut dcols);
                dpool = col2im(&dcols, cin, batch, len);
            }
        }
        grad
    }

    fn update_running_stats(&mut self, cache: &Cache) {
        let lens = self.arch.lens();
        for (i, blk) in cache.blocks.iter().enumerate() {
            let n = (cache.batch * lens[i]) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let (rm, rv) = (self.b_ranges[2 * i].clone(), self.b_ranges[2 * i + 1].clone());
            for c in 0..CHANNELS[i] {
                let m = &mut self.buffers[rm.start + c];
                *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * blk.mean[c];
                let v = &mut self.buffers[rv.start + c];
                *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * blk.var[c] * unbias;
            }
        }
    }

    /// Logits for every example, in chunks.
    pub fn logits(&self, x: ArrayView3<f64>, mode: Mode) -> Result<Vec<f64>> {
        self.check_input(&x)?;
        let n = x.dim().0;
        let mut out = Vec::with_capacity(n);
        let idx: Vec<usize> = (0..n).collect();
        let chunk = if mode == Mode::Train { n.max(1) } else { PREDICT_CHUNK };
        for part in idx.chunks(chunk) {
            out.extend(self.forward(self.gather(&x, part), part.len(), mode).0);
        }
        Ok(out)
    }

    /// P(class 1) in eval mode.
    pub fn predict_proba(&self, x: ArrayView3<f64>) -> Result<Vec<f64>> {
        Ok(self.logits(x, Mode::Eval)?.into_iter().map(sigmoid).collect())
    }

    /// Mean BCE over the whole batch (train mode uses its batch statistics).
    pub fn loss(&self, x: ArrayView3<f64>, y: &[u8], mode: Mode) -> Result<f64> {
        self.check_input(&x)?;
        let idx: Vec<usize> = (0..x.dim().0).collect();
        let (logits, _) = self.forward(self.gather(&x, &idx), idx.len(), mode);
        Ok(bce_with_logits(&logits, y).0)
    }

    /// Train-mode loss and parameter gradient over the whole batch.
    pub fn loss_and_grad(&self, x: ArrayView3<f64>, y: &[u8]) -> Result<(f64, Vec<f64>)> {
        self.check_input(&x)?;
        if y.len() != x.dim().0 {
            return Err(Error::invalid("label count does not match batch"));
        }
        let idx: Vec<usize> = (0..x.dim().0).collect();
        let (logits, cache) = self.forward(self.gather(&x, &idx), idx.len(), Mode::Train);
        let (loss, dl) = bce_with_logits(&logits, y);
        Ok((loss, self.backward(&cache, &dl)))
    }

    /// Which pre-activation units are positive (ReLU pattern) in a forward pass.
    pub fn relu_mask(&self, x: ArrayView3<f64>, mode: Mode) -> Result<Vec<bool>> {
        self.check_input(&x)?;
        let idx: Vec<usize> = (0..x.dim().0).collect();
        let (_, cache) = self.forward(self.gather(&x, &idx), idx.len(), mode);
        Ok(cache.blocks.iter().flat_map(|b| b.act.iter().map(|&v| v > 0.0).collect::<Vec<_>>()).collect())
    }

    /// Compare the analytic gradient with central differences on every
    /// parameter. Perturbations that flip a ReLU are skipped.
    pub fn gradient_check(&mut self, x: ArrayView3<f64>, y: &[u8], eps: f64) -> Result<GradCheck> {
        let (_, grad) = self.loss_and_grad(x, y)?;
        let base = self.relu_mask(x, Mode::Train)?;
        let mut tensors = Vec::new();
        let mut skipped = 0;
        for (name, range) in self.param_tensors() {
            let (mut diff, mut a2, mut n2, mut worst) = (0.0, 0.0, 0.0, 0.0f64);
            for k in range {
                let orig = self.params[k];
                self.params[k] = orig + eps;
                let up = self.loss(x, y, Mode::Train)?;
                let mut kink = self.relu_mask(x, Mode::Train)? != base;
                self.params[k] = orig - eps;
                let down = self.loss(x, y, Mode::Train)?;
                kink |= self.relu_mask(x, Mode::Train)? != base;
                self.params[k] = orig;
                if kink {
                    skipped += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * eps);
                diff += (numeric - grad[k]).powi(2);
                a2 += grad[k] * grad[k];
                n2 += numeric * numeric;
                worst = worst.max((numeric - grad[k]).abs());
            }
            let (diff, a, n) = (f64::sqrt(diff), f64::sqrt(a2), f64::sqrt(n2));
            tensors.push(TensorCheck {
                name,
                relative_error: diff / a.max(n).max(GRAD_NORM_FLOOR),
                grad_norm: a,
                max_abs_error: worst,
            });
        }
        Ok(GradCheck {
            eps,
            tensors,
            skipped,
            checked: self.n_params(),
        })
    }
}

/// Below this gradient norm a tensor counts as having zero gradient (conv
/// biases ahead of batch norm), and the comparison becomes absolute.
pub const GRAD_NORM_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    /// ‖numeric − analytic‖ / max(‖analytic‖, ‖numeric‖, floor).
    pub relative_error: f64,
    pub grad_norm: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub eps: f64,
    pub tensors: Vec<TensorCheck>,
    pub skipped: usize,
    pub checked: usize,
}

impl GradCheck {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

/// Adam state over the flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.b1 * *m + (1.0 - self.b1) * g;
            *v = self.b2 * *v + (1.0 - self.b2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Mini-batch Adam on binary cross-entropy. Stops early once the epoch loss
/// has not improved by `min_delta` for `patience` epochs.
pub fn train_cnn(model: &mut CnnModel, x: ArrayView3<f64>, y: &[u8], cfg: &CnnConfig, seed: u64) -> Result<TrainLog> {
    model.check_input(&x)?;
    let n = x.dim().0;
    if y.len() != n {
        return Err(Error::invalid(format!("{n} traces but {} labels", y.len())));
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::invalid("CNN training labels contain a single class"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = Adam {
        m: vec![0.0; model.n_params()],
        v: vec![0.0; model.n_params()],
        t: 0,
        lr: cfg.learning_rate,
        b1: cfg.beta1,
        b2: cfg.beta2,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog {
        loss_curve: Vec::new(),
        epochs_run: 0,
        stopped_early: false,
    };
    let (mut best, mut stale) = (f64::INFINITY, 0);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let labels: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
            let (logits, cache) = model.forward(model.gather(&x, idx), idx.len(), Mode::Train);
            let (loss, dl) = bce_with_logits(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite CNN loss at epoch {epoch}, batch {bi} (max |logit| {:.3e})",
                    logits.iter().fold(0.0f64, |a, v| a.max(v.abs()))
                )));
            }
            let grad = model.backward(&cache, &dl);
            adam.step(&mut model.params, &grad);
            model.update_running_stats(&cache);
            total += loss * idx.len() as f64;
        }
        let epoch_loss = total / n as f64;
        log.loss_curve.push(epoch_loss);
        log.epochs_run = epoch + 1;
        log::debug!("cnn epoch {epoch}: loss {epoch_loss:.5}");
        if best - epoch_loss > cfg.min_delta {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok(log)
}

/// CNN model container:
///
/// | field | type |
/// |---|---|
/// | magic | `b"CFQN"` |
/// | version | u32 (= 1) |
/// | kind | u16 byte length + UTF-8 |
/// | in_channels, input_len | 2 × u32 |
/// | tensor count | u32 |
/// | per tensor | u16 name length + UTF-8 name, u32 rank, rank × u32 dims, f32 data |
///
/// Trainable tensors come first, then the batch-norm running statistics.
pub fn write_cnn(model: &CnnModel, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(model.params.len() * 4 + 4096);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.kind.len() as u16).to_le_bytes());
    buf.extend_from_slice(model.kind.as_bytes());
    buf.extend_from_slice(&(model.arch.in_channels as u32).to_le_bytes());
    buf.extend_from_slice(&(model.arch.input_len as u32).to_le_bytes());
    let specs: Vec<_> = model.arch.tensors().into_iter().chain(model.arch.buffers()).collect();
    buf.extend_from_slice(&(specs.len() as u32).to_le_bytes());
    let data = model.p_ranges.iter().map(|r| &model.params[r.clone()]).chain(model.b_ranges.iter().map(|r| &model.buffers[r.clone()]));
    for ((name, shape), values) in specs.iter().zip(data) {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_cnn(path: &Path) -> Result<CnnModel> {
    let buf = read_all(path)?;
    let mut cur = Cursor {
        buf: &buf,
        pos: 0,
        name: path.display().to_string(),
    };
    if cur.take(4)? != MODEL_MAGIC {
        return Err(Error::invalid(format!("{}: not a CNN model (bad magic)", cur.name)));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::invalid(format!("{}: unsupported version {version}", cur.name)));
    }
    let klen = cur.u16()? as usize;
    let kind = std::str::from_utf8(cur.take(klen)?)
        .map_err(|_| Error::invalid(format!("{}: kind is not UTF-8", cur.name)))?
        .to_string();
    let arch = CnnArch::new(cur.u32()? as usize, cur.u32()? as usize)?;
    let mut model = CnnModel::new(arch, &kind, 0);
    let specs: Vec<_> = arch.tensors().into_iter().chain(arch.buffers()).collect();
    let count = cur.u32()? as usize;
    if count != specs.len() {
        return Err(Error::invalid(format!("{}: expected {} tensors, found {count}", cur.name, specs.len())));
    }
    let n_params = arch.tensors().len();
    for (k, (name, shape)) in specs.iter().enumerate() {
        let nlen = cur.u16()? as usize;
        let got = cur.take(nlen)?;
        let rank = cur.u32()? as usize;
        let dims = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if got != name.as_bytes() || &dims != shape {
            return Err(Error::invalid(format!(
                "{}: tensor {k} is `{}` {dims:?}, expected `{name}` {shape:?}",
                cur.name,
                String::from_utf8_lossy(got)
            )));
        }
        let size: usize = dims.iter().product();
        let raw = cur.take(size * 4)?;
        let dst = if k < n_params {
            &mut model.params[model.p_ranges[k].clone()]
        } else {
            &mut model.buffers[model.b_ranges[k - n_params].clone()]
        };
        for (d, b) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(b.try_into().unwrap()) as f64;
        }
    }
    cur.finish()?;
    Ok(model)
}
