//! Stateless forward kernels plus the backward kernels the layers call.

use rayon::prelude::*;

use super::{Real, Tensor};
use crate::{Error, Result};

fn out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if stride == 0 {
        return Err(Error::contract("conv2d: stride must be >= 1"));
    }
    if padded < k {
        return Err(Error::contract(format!(
            "conv2d: kernel {k} larger than padded extent {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Geometry shared by the convolution kernels.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let (n, h, w, cin) = input.dims4()?;
        let [kh, kw, wcin, cout] = *weights.shape() else {
            return Err(Error::contract(format!(
                "conv2d: weights must be [kh,kw,Cin,Cout], got {:?}",
                weights.shape()
            )));
        };
        if wcin != cin {
            return Err(Error::contract(format!(
                "conv2d: input has {cin} channels but weights expect {wcin}"
            )));
        }
        let oh = out_extent(h, kh, stride, pad)?;
        let ow = out_extent(w, kw, stride, pad)?;
        Ok(ConvGeom {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            oh,
            ow,
        })
    }

    /// Input coordinate for output coordinate `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let i = (o * stride + k).checked_sub(pad)?;
        (i < extent).then_some(i)
    }
}

/// Direct 2-D convolution, channel-last. For each output element the sum runs
/// over kernel row, kernel column, then input channel.
pub fn conv2d<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, weights, stride, padding)?;
    let out = conv_forward(input.data(), weights.data(), &g);
    Ok(Tensor::image_like(input, g.n, g.oh, g.ow, g.cout, out))
}

/// `c = a · b` for row-major `a: [m, k]`, `b: [k, n]`, `c: [m, n]`.
///
/// Each `c[i][j]` starts at zero and accumulates `a[i][p] * b[p][j]` for
/// `p = 0, 1, ..` in order with separately rounded multiply and add, so the
/// result matches a textbook triple loop bit for bit. A 4×8 register tile
/// gives the speed.
pub(crate) fn gemm<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    const MR: usize = 4;
    const NR: usize = 8;
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // Pack `b` into zero-padded column panels `[k][NR]` so every tile runs
    // the full-width kernel; padded columns are computed and discarded.
    let panels = n.div_ceil(NR);
    let mut packed = vec![T::zero(); panels * k * NR];
    for (jp, panel) in packed.chunks_exact_mut(k * NR).enumerate() {
        let j = jp * NR;
        let nr = NR.min(n - j);
        for p in 0..k {
            panel[p * NR..p * NR + nr].copy_from_slice(&b[p * n + j..p * n + j + nr]);
        }
    }
    for i in (0..m).step_by(MR) {
        let mr = MR.min(m - i);
        for (jp, panel) in packed.chunks_exact(k * NR).enumerate() {
            let j = jp * NR;
            let nr = NR.min(n - j);
            let mut acc = [[T::zero(); NR]; MR];
            if mr == MR {
                let rows: [&[T]; MR] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
                for (p, brow) in panel.chunks_exact(NR).enumerate() {
                    let bv: [T; NR] = brow.try_into().expect("NR columns");
                    let av: [T; MR] = std::array::from_fn(|r| rows[r][p]);
                    for r in 0..MR {
                        for q in 0..NR {
                            acc[r][q] += av[r] * bv[q];
                        }
                    }
                }
            } else {
                for r in 0..mr {
                    let row = &a[(i + r) * k..(i + r + 1) * k];
                    for (&av, brow) in row.iter().zip(panel.chunks_exact(NR)) {
                        for (acc, &bv) in acc[r].iter_mut().zip(brow) {
                            *acc += av * bv;
                        }
                    }
                }
            }
            for r in 0..mr {
                c[(i + r) * n + j..(i + r) * n + j + nr].copy_from_slice(&acc[r][..nr]);
            }
        }
    }
}

fn transpose<T: Real>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Patches of output row `oy` of one sample: `[ow, kh·kw·cin]`, taps
    /// ordered (ky, kx, ci) to match the weight layout; padding reads zero.
    fn im2col_row<T: Real>(&self, xs: &[T], oy: usize, cols: &mut [T]) {
        let kl = self.patch_len();
        for ox in 0..self.ow {
            let patch = &mut cols[ox * kl..(ox + 1) * kl];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut patch[(ky * self.kw + kx) * self.cin..][..self.cin];
                    match (
                        ConvGeom::src(oy, ky, self.stride, self.pad, self.h),
                        ConvGeom::src(ox, kx, self.stride, self.pad, self.w),
                    ) {
                        (Some(iy), Some(ix)) => {
                            dst.copy_from_slice(&xs[(iy * self.w + ix) * self.cin..][..self.cin]);
                        }
                        _ => dst.fill(T::zero()),
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, xs: &[T]) -> Vec<T> {
        let row = self.ow * self.patch_len();
        let mut cols = vec![T::zero(); self.oh * row];
        for oy in 0..self.oh {
            self.im2col_row(xs, oy, &mut cols[oy * row..(oy + 1) * row]);
        }
        cols
    }

    /// Scatter-adds patch gradients back onto one sample's input gradient.
    fn col2im<T: Real>(&self, dcols: &[T], dxs: &mut [T]) {
        let kl = self.patch_len();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let patch = &dcols[(oy * self.ow + ox) * kl..][..kl];
                for ky in 0..self.kh {
                    let Some(iy) = ConvGeom::src(oy, ky, self.stride, self.pad, self.h) else {
                        continue;
                    };
                    for kx in 0..self.kw {
                        let Some(ix) = ConvGeom::src(ox, kx, self.stride, self.pad, self.w) else {
                            continue;
                        };
                        let src = &patch[(ky * self.kw + kx) * self.cin..][..self.cin];
                        for (d, &s) in dxs[(iy * self.w + ix) * self.cin..][..self.cin].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(x: &[T], wts: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.oh * g.ow * g.cout];
    let row_len = g.ow * g.cout;
    let sample_in = g.h * g.w * g.cin;
    out.par_chunks_mut(row_len).enumerate().for_each(|(r, row)| {
        let (n, oy) = (r / g.oh, r % g.oh);
        let xs = &x[n * sample_in..(n + 1) * sample_in];
        if g.is_pointwise() {
            gemm(g.ow, g.cout, g.cin, &xs[oy * g.w * g.cin..(oy + 1) * g.w * g.cin], wts, row);
        } else {
            let mut cols = vec![T::zero(); g.ow * g.patch_len()];
            g.im2col_row(xs, oy, &mut cols);
            gemm(g.ow, g.cout, g.patch_len(), &cols, wts, row);
        }
    });
    out
}

/// Returns `(d_input, d_weights)` for upstream gradient `dy`.
pub(crate) fn conv_backward<T: Real>(x: &[T], wts: &[T], dy: &[T], g: &ConvGeom) -> (Vec<T>, Vec<T>) {
    let sample_in = g.h * g.w * g.cin;
    let pixels = g.oh * g.ow;
    let sample_out = pixels * g.cout;
    let kl = g.patch_len();
    let wt = transpose(kl, g.cout, wts);
    let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..g.n)
        .into_par_iter()
        .map(|n| {
            let xs = &x[n * sample_in..(n + 1) * sample_in];
            let dys = &dy[n * sample_out..(n + 1) * sample_out];
            let cols = if g.is_pointwise() {
                xs.to_vec()
            } else {
                g.im2col(xs)
            };
            // dW_n = colsᵀ · dY_n
            let mut dw = vec![T::zero(); kl * g.cout];
            gemm(kl, g.cout, pixels, &transpose(pixels, kl, &cols), dys, &mut dw);
            // dcols = dY_n · Wᵀ
            let mut dcols = vec![T::zero(); pixels * kl];
            gemm(pixels, kl, g.cout, dys, &wt, &mut dcols);
            let dx = if g.is_pointwise() {
                dcols
            } else {
                let mut dx = vec![T::zero(); sample_in];
                g.col2im(&dcols, &mut dx);
                dx
            };
            (dx, dw)
        })
        .collect();
    let mut dx = Vec::with_capacity(g.n * sample_in);
    // Fixed-order reduction keeps training bit-reproducible under any thread count.
    let mut dw = vec![T::zero(); kl * g.cout];
    for (dxs, dws) in per_sample {
        dx.extend_from_slice(&dxs);
        for (a, &b) in dw.iter_mut().zip(&dws) {
            *a += b;
        }
    }
    (dx, dw)
}

pub enum BnMode<'a, T> {
    /// Normalize with batch statistics and fold them into the running stats:
    /// `running = momentum * running + (1 - momentum) * batch`.
    Train {
        running_mean: &'a mut Tensor<T>,
        running_var: &'a mut Tensor<T>,
        momentum: T,
    },
    Eval {
        running_mean: &'a Tensor<T>,
        running_var: &'a Tensor<T>,
    },
}

pub(crate) struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn channels_of<T: Real>(input: &Tensor<T>) -> usize {
    *input.shape().last().expect("rank >= 1")
}

/// Per-channel mean and biased variance over every non-channel position.
pub(crate) fn bn_batch_stats<T: Real>(x: &[T], c: usize) -> BnStats<T> {
    let count = T::of((x.len() / c) as f64);
    let mut mean = vec![T::zero(); c];
    for px in x.chunks(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![T::zero(); c];
    for px in x.chunks(c) {
        for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    BnStats { mean, var }
}

pub(crate) fn bn_apply<T: Real>(x: &[T], mean: &[T], var: &[T], gamma: &[T], beta: &[T], eps: T) -> (Vec<T>, Vec<T>) {
    let c = mean.len();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = vec![T::zero(); x.len()];
    for (yp, xp) in y.chunks_mut(c).zip(x.chunks(c)) {
        for ch in 0..c {
            yp[ch] = gamma[ch] * ((xp[ch] - mean[ch]) * inv_std[ch]) + beta[ch];
        }
    }
    (y, inv_std)
}

pub fn batch_norm<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
    mode: BnMode<'_, T>,
) -> Result<Tensor<T>> {
    if eps <= T::zero() {
        return Err(Error::contract("batch_norm: eps must be > 0"));
    }
    let c = channels_of(input);
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.len() != c {
            return Err(Error::contract(format!(
                "batch_norm: {name} has {} entries for {c} channels",
                t.len()
            )));
        }
    }
    let (y, _) = match mode {
        BnMode::Train {
            running_mean,
            running_var,
            momentum,
        } => {
            if running_mean.len() != c || running_var.len() != c {
                return Err(Error::contract("batch_norm: running stats length mismatch"));
            }
            let stats = bn_batch_stats(input.data(), c);
            for (r, &m) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
                *r = momentum * *r + (T::one() - momentum) * m;
            }
            for (r, &v) in running_var.data_mut().iter_mut().zip(&stats.var) {
                *r = momentum * *r + (T::one() - momentum) * v;
            }
            bn_apply(input.data(), &stats.mean, &stats.var, gamma.data(), beta.data(), eps)
        }
        BnMode::Eval {
            running_mean,
            running_var,
        } => {
            if running_mean.len() != c || running_var.len() != c {
                return Err(Error::contract("batch_norm: running stats length mismatch"));
            }
            bn_apply(
                input.data(),
                running_mean.data(),
                running_var.data(),
                gamma.data(),
                beta.data(),
                eps,
            )
        }
    };
    Tensor::from_vec(input.shape(), y)
}

/// Gradients of batch-statistics normalization. `xhat` is the normalized input.
pub(crate) fn bn_backward<T: Real>(dy: &[T], xhat: &[T], inv_std: &[T], gamma: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let m = T::of((dy.len() / c) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (dp, xp) in dy.chunks(c).zip(xhat.chunks(c)) {
        for ch in 0..c {
            dbeta[ch] += dp[ch];
            dgamma[ch] += dp[ch] * xp[ch];
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for ((out, dp), xp) in dx.chunks_mut(c).zip(dy.chunks(c)).zip(xhat.chunks(c)) {
        for ch in 0..c {
            let k = gamma[ch] * inv_std[ch] / m;
            out[ch] = k * (m * dp[ch] - dbeta[ch] - xp[ch] * dgamma[ch]);
        }
    }
    (dx, dgamma, dbeta)
}

/// `input` is `[N]` or `[B,N]`, `weights` `[N,K]`, `bias` `[K]`.
pub fn fully_connected<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [n_in, k] = *weights.shape() else {
        return Err(Error::contract(format!(
            "fully_connected: weights must be [N,K], got {:?}",
            weights.shape()
        )));
    };
    if bias.len() != k {
        return Err(Error::contract(format!(
            "fully_connected: bias has {} entries, expected {k}",
            bias.len()
        )));
    }
    let (batch, n) = match *input.shape() {
        [n] => (1, n),
        [b, n] => (b, n),
        _ => {
            return Err(Error::contract(format!(
                "fully_connected: input must be [N] or [B,N], got {:?}",
                input.shape()
            )))
        }
    };
    if n != n_in {
        return Err(Error::contract(format!(
            "fully_connected: input length {n} does not match weight rows {n_in}"
        )));
    }
    let mut out = vec![T::zero(); batch * k];
    for (orow, xrow) in out.chunks_mut(k).zip(input.data().chunks(n)) {
        for (i, &xv) in xrow.iter().enumerate() {
            let wrow = &weights.data()[i * k..(i + 1) * k];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
        for (o, &b) in orow.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    let shape = if input.rank() == 1 { vec![k] } else { vec![batch, k] };
    Tensor::from_vec(&shape, out)
}

/// Row-wise softmax over the last axis, with max subtraction.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("softmax: non-finite logit"));
    }
    if logits.rank() > 2 {
        return Err(Error::contract(format!(
            "softmax: expected [K] or [B,K], got {:?}",
            logits.shape()
        )));
    }
    let k = *logits.shape().last().expect("rank >= 1");
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::from_vec(logits.shape(), out)
}

/// Mean cross-entropy of `[B,K]` logits against `labels`, and its gradient
/// with respect to the logits (`(p - onehot) / B`).
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let logits = if logits.rank() == 1 {
        logits.clone().reshape(&[1, logits.len()])?
    } else {
        logits.clone()
    };
    let [b, k] = *logits.shape() else {
        return Err(Error::contract("softmax_cross_entropy: logits must be [B,K]"));
    };
    if labels.len() != b {
        return Err(Error::contract(format!(
            "softmax_cross_entropy: {} labels for batch of {b}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = softmax(&logits)?;
    let scale = T::one() / T::of(b as f64);
    let mut loss = T::zero();
    for (row, &label) in probs.data_mut().chunks_mut(k).zip(labels) {
        loss -= row[label].max(T::min_positive_value()).ln();
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, probs))
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
pub fn avg_pool2<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = input.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::contract(format!("avg_pool2: extent {h}x{w} below 2x2")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); n * oh * ow * c];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c;
                    for ch in 0..c {
                        out[o + ch] += x[i + ch];
                    }
                }
                out[o..o + c].iter_mut().for_each(|v| *v *= quarter);
            }
        }
    }
    Ok(Tensor::image_like(input, n, oh, ow, c, out))
}

pub(crate) fn avg_pool2_backward<T: Real>(dy: &[T], n: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut dx = vec![T::zero(); n * h * w * c];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * c;
                for (dyy, dxx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = ((b * h + 2 * oy + dyy) * w + 2 * ox + dxx) * c;
                    for ch in 0..c {
                        dx[i + ch] = dy[o + ch] * quarter;
                    }
                }
            }
        }
    }
    dx
}

/// Mean over H and W: `[N,H,W,C] -> [N,C]`, `[H,W,C] -> [C]`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = input.dims4()?;
    let inv = T::one() / T::of((h * w) as f64);
    let mut out = vec![T::zero(); n * c];
    for (b, sample) in input.data().chunks(h * w * c).enumerate() {
        let o = &mut out[b * c..(b + 1) * c];
        for px in sample.chunks(c) {
            for (a, &v) in o.iter_mut().zip(px) {
                *a += v;
            }
        }
        o.iter_mut().for_each(|v| *v *= inv);
    }
    let shape = if input.rank() == 3 { vec![c] } else { vec![n, c] };
    Tensor::from_vec(&shape, out)
}

/// Appends `b`'s channels after `a`'s.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, ca) = a.dims4()?;
    let (nb, hb, wb, cb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) || a.rank() != b.rank() {
        return Err(Error::contract(format!(
            "concat: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (pa, pb) in a.data().chunks(ca).zip(b.data().chunks(cb)) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    Ok(Tensor::image_like(a, n, h, w, ca + cb, out))
}

/// Inverse of [`concat_channels`]: first `c_first` channels, then the rest.
pub fn split_channels<T: Real>(x: &Tensor<T>, c_first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, h, w, c) = x.dims4()?;
    if c_first == 0 || c_first >= c {
        return Err(Error::contract(format!("split: {c_first} of {c} channels")));
    }
    let mut a = Vec::with_capacity(n * h * w * c_first);
    let mut b = Vec::with_capacity(n * h * w * (c - c_first));
    for px in x.data().chunks(c) {
        a.extend_from_slice(&px[..c_first]);
        b.extend_from_slice(&px[c_first..]);
    }
    Ok((
        Tensor::image_like(x, n, h, w, c_first, a),
        Tensor::image_like(x, n, h, w, c - c_first, b),
    ))
}
