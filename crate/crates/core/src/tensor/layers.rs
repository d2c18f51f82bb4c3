//! Stateful layers. `forward` is the pure eval path and may be shared across
//! threads; `forward_train` records what `backward` needs.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, ConvGeom};
use super::{Real, Tensor};
use crate::{Error, Result};

/// A trainable tensor and its accumulated gradient (always the same shape).
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    fn accumulate(&mut self, g: &[T]) {
        for (a, &b) in self.grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Parameter and buffer traversal shared by every layer and network block.
/// Traversal order is fixed and defines checkpoint layout.
pub trait Module<T: Real> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));
    /// Non-trainable persistent tensors (batch-norm running statistics).
    fn visit_buffers(&self, _f: &mut dyn FnMut(&Tensor<T>)) {}
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&mut Tensor<T>)) {}

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.grad.fill(T::zero()));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }
}

fn not_recorded(layer: &str) -> Error {
    Error::contract(format!("{layer}: backward called before forward_train"))
}

fn he_normal<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    normal_tensor(shape, std, rng)
}

fn normal_tensor<T: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape product")
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub stride: usize,
    pub padding: usize,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    /// He-normal initialized, no bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let w = he_normal(&[kh, kw, cin, cout], kh * kw * cin, rng);
        Self::from_weights(w, stride, padding)
    }

    pub fn from_weights(weights: Tensor<T>, stride: usize, padding: usize) -> Self {
        Conv2d {
            weight: Param::new(weights),
            stride,
            padding,
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[3]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &self.weight.value, self.stride, self.padding)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.forward(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| not_recorded("conv2d"))?;
        let g = ConvGeom::new(&x, &self.weight.value, self.stride, self.padding)?;
        if dy.len() != g.n * g.oh * g.ow * g.cout {
            return Err(Error::contract(format!(
                "conv2d backward: upstream {:?} does not match output",
                dy.shape()
            )));
        }
        let (dx, dw) = ops::conv_backward(x.data(), self.weight.value.data(), dy.data(), &g);
        self.weight.accumulate(&dw);
        Tensor::from_vec(x.shape(), dx)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
    }
}

#[derive(Clone, Debug)]
enum BnCache<T> {
    Identity,
    Normalized { xhat: Vec<T>, inv_std: Vec<T> },
}

/// Per-channel batch normalization. A disabled instance is the identity and
/// owns no parameters.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub eps: T,
    pub enabled: bool,
    cache: Option<BnCache<T>>,
}

impl<T: Real> BatchNorm<T> {
    pub const MOMENTUM: f64 = 0.9;
    pub const EPS: f64 = 1e-5;

    pub fn new(channels: usize, enabled: bool) -> Self {
        BatchNorm {
            gamma: Param::new(Tensor::filled(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            momentum: T::of(Self::MOMENTUM),
            eps: T::of(Self::EPS),
            enabled,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        let c = *x.shape().last().expect("rank >= 1");
        if c != self.channels() {
            return Err(Error::contract(format!(
                "batch_norm: input has {c} channels, layer has {}",
                self.channels()
            )));
        }
        Ok(c)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        if !self.enabled {
            return Ok(x.clone());
        }
        ops::batch_norm(
            x,
            &self.gamma.value,
            &self.beta.value,
            self.eps,
            ops::BnMode::Eval {
                running_mean: &self.running_mean,
                running_var: &self.running_var,
            },
        )
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check(x)?;
        if !self.enabled {
            self.cache = Some(BnCache::Identity);
            return Ok(x.clone());
        }
        let stats = ops::bn_batch_stats(x.data(), c);
        let m = self.momentum;
        for (r, &v) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (T::one() - m) * v;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = m * *r + (T::one() - m) * v;
        }
        let ones = vec![T::one(); c];
        let zeros = vec![T::zero(); c];
        let (xhat, inv_std) = ops::bn_apply(x.data(), &stats.mean, &stats.var, &ones, &zeros, self.eps);
        let mut y = xhat.clone();
        for px in y.chunks_mut(c) {
            for ((v, &g), &b) in px.iter_mut().zip(self.gamma.value.data()).zip(self.beta.value.data()) {
                *v = g * *v + b;
            }
        }
        self.cache = Some(BnCache::Normalized { xhat, inv_std });
        Tensor::from_vec(x.shape(), y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match self.cache.take().ok_or_else(|| not_recorded("batch_norm"))? {
            BnCache::Identity => Ok(dy.clone()),
            BnCache::Normalized { xhat, inv_std } => {
                if xhat.len() != dy.len() {
                    return Err(Error::contract("batch_norm backward: upstream shape mismatch"));
                }
                let (dx, dgamma, dbeta) = ops::bn_backward(dy.data(), &xhat, &inv_std, self.gamma.value.data());
                self.gamma.accumulate(&dgamma);
                self.beta.accumulate(&dbeta);
                Tensor::from_vec(dy.shape(), dx)
            }
        }
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        if self.enabled {
            f(&self.gamma);
            f(&self.beta);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if self.enabled {
            f(&mut self.gamma);
            f(&mut self.beta);
        }
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Tensor<T>)) {
        if self.enabled {
            f(&self.running_mean);
            f(&self.running_var);
        }
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        if self.enabled {
            f(&mut self.running_mean);
            f(&mut self.running_var);
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    input: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Relu { input: None }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        ops::relu(x)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input = Some(x.clone());
        ops::relu(x)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| not_recorded("relu"))?;
        let data = x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&xv, &d)| if xv > T::zero() { d } else { T::zero() })
            .collect();
        Tensor::from_vec(x.shape(), data)
    }
}

#[derive(Clone, Debug, Default)]
pub struct AvgPool2 {
    dims: Option<(Vec<usize>, (usize, usize, usize, usize))>,
}

impl AvgPool2 {
    pub fn new() -> Self {
        AvgPool2 { dims: None }
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::avg_pool2(x)
    }

    pub fn forward_train<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.dims = Some((x.shape().to_vec(), x.dims4()?));
        ops::avg_pool2(x)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, (n, h, w, c)) = self.dims.take().ok_or_else(|| not_recorded("avg_pool2"))?;
        if dy.len() != n * (h / 2) * (w / 2) * c {
            return Err(Error::contract("avg_pool2 backward: upstream shape mismatch"));
        }
        Tensor::from_vec(&shape, ops::avg_pool2_backward(dy.data(), n, h, w, c))
    }
}

#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    dims: Option<(Vec<usize>, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { dims: None }
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::global_avg_pool(x)
    }

    pub fn forward_train<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, h, w, _) = x.dims4()?;
        self.dims = Some((x.shape().to_vec(), h * w));
        ops::global_avg_pool(x)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, area) = self.dims.take().ok_or_else(|| not_recorded("global_avg_pool"))?;
        let c = *shape.last().expect("rank >= 1");
        let inv = T::one() / T::of(area as f64);
        let mut dx = Vec::with_capacity(shape.iter().product());
        for row in dy.data().chunks(c) {
            for _ in 0..area {
                dx.extend(row.iter().map(|&d| d * inv));
            }
        }
        Tensor::from_vec(&shape, dx)
    }
}

/// Fully-connected layer, `y = x·W + b` with `W` stored `[N,K]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let w = normal_tensor(&[n_in, n_out], (1.0 / n_in as f64).sqrt(), rng);
        Self::from_weights(w, Tensor::zeros(&[n_out]))
    }

    pub fn from_weights(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Linear {
            weight: Param::new(weight),
            bias: Param::new(bias),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::fully_connected(x, &self.weight.value, &self.bias.value)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.forward(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| not_recorded("linear"))?;
        let (n, k) = (self.in_features(), self.out_features());
        if dy.len() * n != x.len() * k {
            return Err(Error::contract("linear backward: upstream shape mismatch"));
        }
        let w = self.weight.value.data();
        let mut dx = vec![T::zero(); x.len()];
        let mut dw = vec![T::zero(); n * k];
        let mut db = vec![T::zero(); k];
        for ((xrow, drow), dxrow) in x.data().chunks(n).zip(dy.data().chunks(k)).zip(dx.chunks_mut(n)) {
            for (b, &d) in db.iter_mut().zip(drow) {
                *b += d;
            }
            for i in 0..n {
                let wrow = &w[i * k..(i + 1) * k];
                dxrow[i] = wrow.iter().zip(drow).map(|(&a, &b)| a * b).sum();
                let xv = xrow[i];
                for (g, &d) in dw[i * k..(i + 1) * k].iter_mut().zip(drow) {
                    *g += xv * d;
                }
            }
        }
        self.weight.accumulate(&dw);
        self.bias.accumulate(&db);
        Tensor::from_vec(x.shape(), dx)
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Relative error with a small absolute floor.
    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Scalar objective `sum(y * probe)` used to drive every layer check.
    fn probe_loss(y: &Tensor<f64>, probe: &Tensor<f64>) -> f64 {
        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    }

    fn check_input_grad(
        x: &Tensor<f64>,
        analytic: &Tensor<f64>,
        mut f: impl FnMut(&Tensor<f64>) -> f64,
    ) {
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let num = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!(rel(analytic.data()[i], num) < 1e-5, "input {i}: {} vs {num}", analytic.data()[i]);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random(&[2, 5, 4, 3], &mut rng);
        let mut conv = Conv2d::<f64>::new(3, 3, 3, 2, 2, 1, &mut rng);
        let y = conv.forward_train(&x).unwrap();
        let probe = random(y.shape(), &mut rng);
        let dx = conv.backward(&probe).unwrap();
        let base = conv.clone();
        check_input_grad(&x, &dx, |xi| probe_loss(&base.forward(xi).unwrap(), &probe));
        let h = 1e-5;
        for i in 0..conv.weight.value.len() {
            let mut p = base.clone();
            p.weight.value.data_mut()[i] += h;
            let mut m = base.clone();
            m.weight.value.data_mut()[i] -= h;
            let num = (probe_loss(&p.forward(&x).unwrap(), &probe) - probe_loss(&m.forward(&x).unwrap(), &probe)) / (2.0 * h);
            assert!(rel(conv.weight.grad.data()[i], num) < 1e-5);
        }
    }

    #[test]
    fn batch_norm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[3, 2, 2, 2], &mut rng);
        let mut bn = BatchNorm::<f64>::new(2, true);
        bn.gamma.value = random(&[2], &mut rng);
        bn.beta.value = random(&[2], &mut rng);
        let y = bn.forward_train(&x).unwrap();
        let probe = random(y.shape(), &mut rng);
        let dx = bn.backward(&probe).unwrap();
        let base = bn.clone();
        let loss = |b: &BatchNorm<f64>, xi: &Tensor<f64>| {
            let mut b = b.clone();
            probe_loss(&b.forward_train(xi).unwrap(), &probe)
        };
        check_input_grad(&x, &dx, |xi| loss(&base, xi));
        let h = 1e-5;
        for i in 0..2 {
            let mut p = base.clone();
            p.gamma.value.data_mut()[i] += h;
            let mut m = base.clone();
            m.gamma.value.data_mut()[i] -= h;
            let num = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!(rel(bn.gamma.grad.data()[i], num) < 1e-5);
        }
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random(&[1, 4], &mut rng);
        let mut fc = Linear::<f64>::new(4, 3, &mut rng);
        fc.forward_train(&x).unwrap();
        let up = random(&[1, 3], &mut rng);
        let dx = fc.backward(&up).unwrap();
        for i in 0..4 {
            for k in 0..3 {
                assert_eq!(fc.weight.grad.data()[i * 3 + k], x.data()[i] * up.data()[k]);
            }
        }
        assert_eq!(fc.bias.grad.data(), up.data());
        let base = fc.clone();
        check_input_grad(&x, &dx, |xi| probe_loss(&base.forward(xi).unwrap(), &up));
    }

    #[test]
    fn pooling_and_relu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random(&[2, 4, 6, 3], &mut rng);
        let mut pool = AvgPool2::new();
        let y = pool.forward_train(&x).unwrap();
        let probe = random(y.shape(), &mut rng);
        let dx = pool.backward(&probe).unwrap();
        check_input_grad(&x, &dx, |xi| probe_loss(&avg_pool_eval(xi), &probe));

        let mut gap = GlobalAvgPool::new();
        let y = gap.forward_train(&x).unwrap();
        let probe = random(y.shape(), &mut rng);
        let dx = gap.backward(&probe).unwrap();
        check_input_grad(&x, &dx, |xi| probe_loss(&GlobalAvgPool::new().forward(xi).unwrap(), &probe));

        let mut r = Relu::new();
        let y = r.forward_train(&x);
        let probe = random(y.shape(), &mut rng);
        let dx = r.backward(&probe).unwrap();
        check_input_grad(&x, &dx, |xi| probe_loss(&Relu::new().forward(xi), &probe));
    }

    fn avg_pool_eval(x: &Tensor<f64>) -> Tensor<f64> {
        AvgPool2::new().forward(x).unwrap()
    }

    #[test]
    fn backward_before_forward_is_a_contract_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut conv = Conv2d::<f32>::new(1, 1, 2, 2, 1, 0, &mut rng);
        let dy = Tensor::zeros(&[1, 1, 1, 2]);
        assert!(matches!(conv.backward(&dy), Err(Error::Contract(_))));
        let mut fc = Linear::<f32>::new(2, 2, &mut rng);
        assert!(matches!(fc.backward(&Tensor::zeros(&[1, 2])), Err(Error::Contract(_))));
        assert!(Relu::<f32>::new().backward(&dy).is_err());
        assert!(BatchNorm::<f32>::new(2, true).backward(&dy).is_err());
    }

    #[test]
    fn disabled_batch_norm_has_no_parameters() {
        let bn = BatchNorm::<f32>::new(5, false);
        assert_eq!(bn.param_count(), 0);
        assert_eq!(BatchNorm::<f32>::new(5, true).param_count(), 10);
    }
}
