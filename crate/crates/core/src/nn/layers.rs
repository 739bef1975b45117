//! Layers with explicit forward and backward passes.
//!
//! `infer` is a pure function of the layer state. `forward` additionally
//! caches whatever `backward` needs; `backward` consumes that cache, writes
//! parameter gradients, and returns the gradient with respect to the input.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{cast, Scalar, Tensor};
use crate::par::for_each_chunk_mut;

/// Output positions `lo..hi` whose tap `kk` lands inside the input.
fn valid_range(kk: usize, pad: usize, stride: usize, w_in: usize, w_out: usize) -> (usize, usize) {
    let lo = if pad > kk { (pad - kk).div_ceil(stride) } else { 0 };
    let hi = if w_in + pad > kk {
        ((w_in - 1 + pad - kk) / stride + 1).min(w_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn he_normal<T: Scalar, R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| cast(dist.sample(rng))).collect()
}

/// 1-D convolution without bias; weights laid out `(out, in, k)`.
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<T>,
    pub grad: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        let len = cin * cout * k;
        Self {
            cin,
            cout,
            k,
            stride,
            pad,
            weight: vec![T::zero(); len],
            grad: vec![T::zero(); len],
            input: None,
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.weight = he_normal(self.weight.len(), self.cin * self.k, rng);
    }

    pub fn out_width(&self, w: usize) -> usize {
        (w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Tap `kk` reads phase `p` of the decimated input at offset `q`:
    /// `x[xo*s + kk - pad] == phase_p[xo + q]`.
    fn tap(&self, kk: usize) -> (usize, isize) {
        let off = kk as isize - self.pad as isize;
        let s = self.stride as isize;
        (off.rem_euclid(s) as usize, off.div_euclid(s))
    }

    fn phase_len(&self, w_in: usize) -> usize {
        w_in.div_ceil(self.stride)
    }

    /// Rows `(cin, w)` split into `stride` phases `(cin, stride, phase_len)`.
    fn decimate(&self, xs: &[T], w_in: usize) -> Vec<T> {
        let (s, m) = (self.stride, self.phase_len(w_in));
        let mut out = vec![T::zero(); self.cin * s * m];
        for i in 0..self.cin {
            let row = &xs[i * w_in..(i + 1) * w_in];
            let dst = &mut out[i * s * m..(i + 1) * s * m];
            if s == 1 {
                dst.copy_from_slice(row);
            } else {
                for (t, &v) in row.iter().enumerate() {
                    dst[(t % s) * m + t / s] = v;
                }
            }
        }
        out
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (cin, cout, k, s) = (self.cin, self.cout, self.k, self.stride);
        let w_in = x.w;
        let wo = self.out_width(w_in);
        let m = self.phase_len(w_in);
        let weight = &self.weight;
        let mut out = Tensor::zeros(x.n, cout, wo);
        for_each_chunk_mut(&mut out.data, cout * wo, |n, out_s| {
            let xd = self.decimate(x.sample(n), w_in);
            for o in 0..cout {
                let orow = &mut out_s[o * wo..(o + 1) * wo];
                for i in 0..cin {
                    let wrow = &weight[(o * cin + i) * k..(o * cin + i + 1) * k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let (lo, hi) = valid_range(kk, self.pad, s, w_in, wo);
                        if lo >= hi {
                            continue;
                        }
                        let (p, q) = self.tap(kk);
                        let start = (i * s + p) * m + (lo as isize + q) as usize;
                        axpy(wv, &xd[start..start + hi - lo], &mut orow[lo..hi]);
                    }
                }
            }
        });
        out
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.infer(x);
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("conv backward without forward");
        let (cin, cout, k, s) = (self.cin, self.cout, self.k, self.stride);
        let (w_in, wo) = (x.w, dy.w);
        assert_eq!((dy.n, dy.c), (x.n, cout), "conv output gradient shape");
        let m = self.phase_len(w_in);
        let per = cin * s * m;
        let mut xd = vec![T::zero(); x.n * per];
        for_each_chunk_mut(&mut xd, per, |n, chunk| {
            chunk.copy_from_slice(&self.decimate(x.sample(n), w_in));
        });

        let this = &*self;
        let mut grad = vec![T::zero(); this.weight.len()];
        for_each_chunk_mut(&mut grad, cin * k, |o, g| {
            for n in 0..x.n {
                let dyr = &dy.sample(n)[o * wo..(o + 1) * wo];
                let xs = &xd[n * per..(n + 1) * per];
                for i in 0..cin {
                    for kk in 0..k {
                        let (lo, hi) = valid_range(kk, this.pad, s, w_in, wo);
                        if lo >= hi {
                            continue;
                        }
                        let (p, q) = this.tap(kk);
                        let start = (i * s + p) * m + (lo as isize + q) as usize;
                        g[i * k + kk] = g[i * k + kk] + dot(&dyr[lo..hi], &xs[start..start + hi - lo]);
                    }
                }
            }
        });

        let weight = &this.weight;
        let mut dx = Tensor::zeros(x.n, cin, w_in);
        for_each_chunk_mut(&mut dx.data, cin * w_in, |n, dxs| {
            let dys = dy.sample(n);
            let mut dd = vec![T::zero(); per];
            for o in 0..cout {
                let dyr = &dys[o * wo..(o + 1) * wo];
                for i in 0..cin {
                    let wrow = &weight[(o * cin + i) * k..(o * cin + i + 1) * k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let (lo, hi) = valid_range(kk, this.pad, s, w_in, wo);
                        if lo >= hi {
                            continue;
                        }
                        let (p, q) = this.tap(kk);
                        let start = (i * s + p) * m + (lo as isize + q) as usize;
                        axpy(wv, &dyr[lo..hi], &mut dd[start..start + hi - lo]);
                    }
                }
            }
            for i in 0..cin {
                for t in 0..w_in {
                    dxs[i * w_in + t] = dd[(i * s + t % s) * m + t / s];
                }
            }
        });
        self.grad = grad;
        dx
    }
}

/// `y += a * x`.
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Per-channel batch normalization over batch and width.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    pub momentum: T,
    pub eps: T,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            momentum: cast(0.9),
            eps: cast(1e-5),
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.channels, "batchnorm channels");
        let mut y = x.clone();
        let scale: Vec<T> = (0..self.channels)
            .map(|c| self.gamma[c] / (self.running_var[c] + self.eps).sqrt())
            .collect();
        let shift: Vec<T> = (0..self.channels)
            .map(|c| self.beta[c] - scale[c] * self.running_mean[c])
            .collect();
        let w = x.w;
        for (idx, row) in y.data.chunks_mut(w).enumerate() {
            let c = idx % self.channels;
            row.iter_mut().for_each(|v| *v = scale[c] * *v + shift[c]);
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.channels, "batchnorm channels");
        let (n, c_count, w) = (x.n, x.c, x.w);
        let count = (n * w) as f64;
        let mut mean = vec![T::zero(); c_count];
        let mut var = vec![T::zero(); c_count];
        for (idx, row) in x.data.chunks(w).enumerate() {
            let c = idx % c_count;
            mean[c] = mean[c] + row.iter().copied().sum::<T>();
        }
        let inv_count: T = cast(1.0 / count);
        mean.iter_mut().for_each(|m| *m = *m * inv_count);
        for (idx, row) in x.data.chunks(w).enumerate() {
            let c = idx % c_count;
            let m = mean[c];
            var[c] = var[c] + row.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
        var.iter_mut().for_each(|v| *v = *v * inv_count);
        let inv_std: Vec<T> = var.iter().map(|&v| (v + self.eps).sqrt().recip()).collect();

        let mut xhat = x.clone();
        let mut y = x.clone();
        for (idx, (hrow, yrow)) in xhat.data.chunks_mut(w).zip(y.data.chunks_mut(w)).enumerate() {
            let c = idx % c_count;
            for (h, yv) in hrow.iter_mut().zip(yrow.iter_mut()) {
                *h = (*h - mean[c]) * inv_std[c];
                *yv = self.gamma[c] * *h + self.beta[c];
            }
        }

        let unbias: T = if count > 1.0 { cast(count / (count - 1.0)) } else { T::one() };
        let keep = self.momentum;
        let take = T::one() - keep;
        for c in 0..c_count {
            self.running_mean[c] = keep * self.running_mean[c] + take * mean[c];
            self.running_var[c] = keep * self.running_var[c] + take * var[c] * unbias;
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (xhat, inv_std) = self.cache.take().expect("batchnorm backward without forward");
        let (c_count, w) = (dy.c, dy.w);
        let count = (dy.n * w) as f64;
        let mut sum_dy = vec![T::zero(); c_count];
        let mut sum_dy_xhat = vec![T::zero(); c_count];
        for (idx, (drow, hrow)) in dy.data.chunks(w).zip(xhat.data.chunks(w)).enumerate() {
            let c = idx % c_count;
            for (&d, &h) in drow.iter().zip(hrow) {
                sum_dy[c] = sum_dy[c] + d;
                sum_dy_xhat[c] = sum_dy_xhat[c] + d * h;
            }
        }
        self.grad_beta.copy_from_slice(&sum_dy);
        self.grad_gamma.copy_from_slice(&sum_dy_xhat);

        let m: T = cast(count);
        let inv_m: T = cast(1.0 / count);
        let mut dx = dy.clone();
        for (idx, (drow, hrow)) in dx.data.chunks_mut(w).zip(xhat.data.chunks(w)).enumerate() {
            let c = idx % c_count;
            let k = self.gamma[c] * inv_std[c] * inv_m;
            for (d, &h) in drow.iter_mut().zip(hrow) {
                *d = k * (m * *d - sum_dy[c] - h * sum_dy_xhat[c]);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.infer(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let y = self.output.take().expect("relu backward without forward");
        let mut dx = dy.clone();
        for (d, &v) in dx.data.iter_mut().zip(&y.data) {
            if v <= T::zero() {
                *d = T::zero();
            }
        }
        dx
    }
}

/// Mean over the width axis: `(n, c, w) -> (n, c, 1)`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    width: Option<usize>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { width: None }
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let inv: T = cast(1.0 / x.w as f64);
        let data = x.data.chunks(x.w).map(|r| r.iter().copied().sum::<T>() * inv).collect();
        Tensor { n: x.n, c: x.c, w: 1, data }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.width = Some(x.w);
        self.infer(x)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let w = self.width.take().expect("pool backward without forward");
        let inv: T = cast(1.0 / w as f64);
        let data = dy
            .data
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, w))
            .collect();
        Tensor { n: dy.n, c: dy.c, w, data }
    }
}

/// Fully connected layer on `(n, in, 1)` tensors; weights laid out `(out, in)`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub din: usize,
    pub dout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(din: usize, dout: usize) -> Self {
        Self {
            din,
            dout,
            weight: vec![T::zero(); din * dout],
            bias: vec![T::zero(); dout],
            grad_weight: vec![T::zero(); din * dout],
            grad_bias: vec![T::zero(); dout],
            input: None,
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.weight = he_normal(self.weight.len(), self.din, rng);
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.sample_len(), self.din, "dense input size");
        let mut y = Tensor::zeros(x.n, self.dout, 1);
        for (n, yrow) in y.data.chunks_mut(self.dout).enumerate() {
            let xs = x.sample(n);
            for (o, yv) in yrow.iter_mut().enumerate() {
                let wrow = &self.weight[o * self.din..(o + 1) * self.din];
                *yv = self.bias[o] + wrow.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.infer(x);
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("dense backward without forward");
        let (din, dout) = (self.din, self.dout);
        self.grad_weight.iter_mut().for_each(|g| *g = T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
        let mut dx = Tensor::zeros(x.n, x.c, x.w);
        for n in 0..x.n {
            let xs = x.sample(n);
            let dys = &dy.data[n * dout..(n + 1) * dout];
            let dxs = &mut dx.data[n * din..(n + 1) * din];
            for (o, &g) in dys.iter().enumerate() {
                self.grad_bias[o] = self.grad_bias[o] + g;
                let wrow = &self.weight[o * din..(o + 1) * din];
                let grow = &mut self.grad_weight[o * din..(o + 1) * din];
                for i in 0..din {
                    grow[i] = grow[i] + g * xs[i];
                    dxs[i] = dxs[i] + g * wrow[i];
                }
            }
        }
        dx
    }
}

/// Row-wise softmax of `(n, m, 1)` logits.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let m = logits.sample_len();
    let mut p = logits.clone();
    for row in p.data.chunks_mut(m) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    p
}

/// Mean cross-entropy, the posteriors, and the logit gradient `(p - onehot) / n`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> (T, Tensor<T>, Tensor<T>) {
    assert_eq!(logits.n, labels.len(), "one label per sample");
    let m = logits.sample_len();
    let probs = softmax(logits);
    let inv_n: T = cast(1.0 / logits.n.max(1) as f64);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (n, &label) in labels.iter().enumerate() {
        // log-sum-exp form keeps the loss finite when p underflows
        let row = &logits.data[n * m..(n + 1) * m];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss = loss + (lse - row[label]);
        let g = &mut grad.data[n * m..(n + 1) * m];
        g[label] = g[label] - T::one();
        g.iter_mut().for_each(|v| *v = *v * inv_n);
    }
    (loss * inv_n, probs, grad)
}
