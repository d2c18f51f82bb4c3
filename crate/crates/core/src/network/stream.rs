//! One DenseNet-BC stream.

use rand::Rng;

use crate::tensor::{concat_channels, split_channels, AvgPool2, BatchNorm, Conv2d, Module, Param, Real, Relu, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    /// Growth rate `k`: channels added by each dense layer.
    pub growth: usize,
    /// Dense layers per block.
    pub blocks: Vec<usize>,
    /// The bottleneck 1×1 produces `bottleneck_factor * k` channels.
    pub bottleneck_factor: usize,
    /// Transition compression θ ∈ (0, 1].
    pub compression: f64,
    pub batch_norm: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            growth: 12,
            blocks: vec![4, 4],
            bottleneck_factor: 4,
            compression: 0.5,
            batch_norm: true,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.growth == 0 {
            return Err(Error::contract("stream: growth rate must be >= 1"));
        }
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return Err(Error::contract("stream: need at least one block, each with >= 1 layer"));
        }
        if self.bottleneck_factor == 0 {
            return Err(Error::contract("stream: bottleneck factor must be >= 1"));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::contract("stream: compression must be in (0, 1]"));
        }
        Ok(())
    }

    /// Channels kept by a transition fed `c` channels: `⌈θ·c⌉`.
    pub fn compressed(&self, c: usize) -> usize {
        // The tolerance keeps e.g. 0.3 * 10 from rounding up to 4.
        ((self.compression * c as f64 - 1e-9).ceil() as usize).max(1)
    }

    /// Channels of the stream's output feature map.
    pub fn output_channels(&self) -> usize {
        let mut c = 2 * self.growth;
        for (i, &layers) in self.blocks.iter().enumerate() {
            if i > 0 {
                c = self.compressed(c);
            }
            c += layers * self.growth;
        }
        c
    }

    /// Trainable scalars of one stream.
    pub fn param_count(&self, input_channels: usize) -> usize {
        let (k, mid) = (self.growth, self.bottleneck_factor * self.growth);
        let bn = |c: usize| if self.batch_norm { 2 * c } else { 0 };
        let mut n = 9 * input_channels * 2 * k;
        let mut c = 2 * k;
        for (i, &layers) in self.blocks.iter().enumerate() {
            if i > 0 {
                let out = self.compressed(c);
                n += bn(c) + c * out;
                c = out;
            }
            for _ in 0..layers {
                n += bn(c) + c * mid + bn(mid) + 9 * mid * k;
                c += k;
            }
        }
        n + bn(c)
    }

    /// Spatial reduction factor (one 2×2 pool per transition).
    pub fn downsample(&self) -> usize {
        1 << (self.blocks.len() - 1)
    }
}

/// BN → ReLU → 1×1 (to `bottleneck_factor·k`) → BN → ReLU → 3×3 (to `k`),
/// output concatenated after the input.
#[derive(Clone, Debug)]
pub struct DenseLayer<T> {
    pub bn1: BatchNorm<T>,
    relu1: Relu<T>,
    pub conv1: Conv2d<T>,
    pub bn2: BatchNorm<T>,
    relu2: Relu<T>,
    pub conv2: Conv2d<T>,
    in_channels: usize,
}

impl<T: Real> DenseLayer<T> {
    fn new<R: Rng + ?Sized>(c: usize, cfg: &StreamConfig, rng: &mut R) -> Self {
        let mid = cfg.bottleneck_factor * cfg.growth;
        DenseLayer {
            bn1: BatchNorm::new(c, cfg.batch_norm),
            relu1: Relu::new(),
            conv1: Conv2d::new(1, 1, c, mid, 1, 0, rng),
            bn2: BatchNorm::new(mid, cfg.batch_norm),
            relu2: Relu::new(),
            conv2: Conv2d::new(3, 3, mid, cfg.growth, 1, 1, rng),
            in_channels: c,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.conv1.forward(&self.relu1.forward(&self.bn1.forward(x)?))?;
        let y = self.conv2.forward(&self.relu2.forward(&self.bn2.forward(&h)?))?;
        concat_channels(x, &y)
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.bn1.forward_train(x)?;
        let h = self.conv1.forward_train(&self.relu1.forward_train(&h))?;
        let h = self.bn2.forward_train(&h)?;
        let y = self.conv2.forward_train(&self.relu2.forward_train(&h))?;
        concat_channels(x, &y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (mut dx, dnew) = split_channels(dy, self.in_channels)?;
        let g = self.conv2.backward(&dnew)?;
        let g = self.bn2.backward(&self.relu2.backward(&g)?)?;
        let g = self.conv1.backward(&g)?;
        let g = self.bn1.backward(&self.relu1.backward(&g)?)?;
        dx.add_assign(&g)?;
        Ok(dx)
    }
}

impl<T: Real> Module<T> for DenseLayer<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.bn1.visit_params(f);
        self.conv1.visit_params(f);
        self.bn2.visit_params(f);
        self.conv2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.bn1.visit_params_mut(f);
        self.conv1.visit_params_mut(f);
        self.bn2.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Tensor<T>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        self.bn1.visit_buffers_mut(f);
        self.bn2.visit_buffers_mut(f);
    }
}

/// BN → ReLU → 1×1 (to `⌈θ·c⌉`) → 2×2 average pool.
#[derive(Clone, Debug)]
pub struct Transition<T> {
    pub bn: BatchNorm<T>,
    relu: Relu<T>,
    pub conv: Conv2d<T>,
    pool: AvgPool2,
}

impl<T: Real> Transition<T> {
    fn new<R: Rng + ?Sized>(c: usize, out: usize, batch_norm: bool, rng: &mut R) -> Self {
        Transition {
            bn: BatchNorm::new(c, batch_norm),
            relu: Relu::new(),
            conv: Conv2d::new(1, 1, c, out, 1, 0, rng),
            pool: AvgPool2::new(),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.pool.forward(&self.conv.forward(&self.relu.forward(&self.bn.forward(x)?))?)
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.bn.forward_train(x)?;
        let h = self.conv.forward_train(&self.relu.forward_train(&h))?;
        self.pool.forward_train(&h)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.conv.backward(&self.pool.backward(dy)?)?;
        self.bn.backward(&self.relu.backward(&g)?)
    }
}

impl<T: Real> Module<T> for Transition<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.bn.visit_params(f);
        self.conv.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.bn.visit_params_mut(f);
        self.conv.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Tensor<T>)) {
        self.bn.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        self.bn.visit_buffers_mut(f);
    }
}

/// Stem 3×3 conv (`2k` filters) → dense blocks separated by transitions →
/// final BN → ReLU.
#[derive(Clone, Debug)]
pub struct Stream<T> {
    pub input_channels: usize,
    pub stem: Conv2d<T>,
    pub blocks: Vec<Vec<DenseLayer<T>>>,
    pub transitions: Vec<Transition<T>>,
    pub final_bn: BatchNorm<T>,
    final_relu: Relu<T>,
}

impl<T: Real> Stream<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &StreamConfig, input_channels: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if input_channels == 0 {
            return Err(Error::contract("stream: input_channels must be >= 1"));
        }
        let stem = Conv2d::new(3, 3, input_channels, 2 * cfg.growth, 1, 1, rng);
        let mut c = 2 * cfg.growth;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (i, &layers) in cfg.blocks.iter().enumerate() {
            if i > 0 {
                let out = cfg.compressed(c);
                transitions.push(Transition::new(c, out, cfg.batch_norm, rng));
                c = out;
            }
            let mut block = Vec::with_capacity(layers);
            for _ in 0..layers {
                block.push(DenseLayer::new(c, cfg, rng));
                c += cfg.growth;
            }
            blocks.push(block);
        }
        Ok(Stream {
            input_channels,
            stem,
            blocks,
            transitions,
            final_bn: BatchNorm::new(c, cfg.batch_norm),
            final_relu: Relu::new(),
        })
    }

    pub fn output_channels(&self) -> usize {
        self.final_bn.channels()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let c = *x.shape().last().expect("rank >= 1");
        if c != self.input_channels {
            return Err(Error::contract(format!(
                "stream expects {} input channels, got {c}",
                self.input_channels
            )));
        }
        Ok(())
    }

    /// Eval-mode forward: `[N,H,W,Cin]` (or `[H,W,Cin]`) to `[N,H',W',D]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x)?;
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                h = self.transitions[i - 1].forward(&h)?;
            }
            for layer in block {
                h = layer.forward(&h)?;
            }
        }
        Ok(self.final_relu.forward(&self.final_bn.forward(&h)?))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.stem.forward_train(x)?;
        for i in 0..self.blocks.len() {
            if i > 0 {
                h = self.transitions[i - 1].forward_train(&h)?;
            }
            for layer in &mut self.blocks[i] {
                h = layer.forward_train(&h)?;
            }
        }
        let h = self.final_bn.forward_train(&h)?;
        Ok(self.final_relu.forward_train(&h))
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.final_bn.backward(&self.final_relu.backward(dy)?)?;
        for i in (0..self.blocks.len()).rev() {
            for layer in self.blocks[i].iter_mut().rev() {
                g = layer.backward(&g)?;
            }
            if i > 0 {
                g = self.transitions[i - 1].backward(&g)?;
            }
        }
        self.stem.backward(&g)
    }
}

impl<T: Real> Module<T> for Stream<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.stem.visit_params(f);
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                self.transitions[i - 1].visit_params(f);
            }
            block.iter().for_each(|l| l.visit_params(f));
        }
        self.final_bn.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_params_mut(f);
        for i in 0..self.blocks.len() {
            if i > 0 {
                self.transitions[i - 1].visit_params_mut(f);
            }
            self.blocks[i].iter_mut().for_each(|l| l.visit_params_mut(f));
        }
        self.final_bn.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Tensor<T>)) {
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                self.transitions[i - 1].visit_buffers(f);
            }
            block.iter().for_each(|l| l.visit_buffers(f));
        }
        self.final_bn.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        for i in 0..self.blocks.len() {
            if i > 0 {
                self.transitions[i - 1].visit_buffers_mut(f);
            }
            self.blocks[i].iter_mut().for_each(|l| l.visit_buffers_mut(f));
        }
        self.final_bn.visit_buffers_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn dense_block_channel_arithmetic() {
        let cfg = StreamConfig {
            growth: 3,
            blocks: vec![4],
            ..StreamConfig::default()
        };
        let s: Stream<f32> = Stream::new(&cfg, 2, &mut rng_for(0, "t")).unwrap();
        let mut c = 6;
        let mut x = s.stem.forward(&Tensor::filled(&[5, 5, 2], 0.5)).unwrap();
        for (n, layer) in s.blocks[0].iter().enumerate() {
            x = layer.forward(&x).unwrap();
            c += 3;
            assert_eq!(x.shape()[2], 6 + (n + 1) * 3);
        }
        assert_eq!(c, s.output_channels());
    }

    #[test]
    fn default_config_shape_bookkeeping() {
        let cfg = StreamConfig::default();
        assert_eq!(cfg.output_channels(), 36 + 48);
        let s: Stream<f32> = Stream::new(&cfg, 3, &mut rng_for(0, "t")).unwrap();
        let y = s.forward(&Tensor::filled(&[112, 112, 3], 0.1)).unwrap();
        assert_eq!(y.shape(), &[56, 56, 84]);
    }

    #[test]
    fn zero_weights_without_bn_give_zero_map() {
        let cfg = StreamConfig {
            growth: 2,
            blocks: vec![1, 1],
            batch_norm: false,
            ..StreamConfig::default()
        };
        let mut s: Stream<f64> = Stream::new(&cfg, 1, &mut rng_for(0, "t")).unwrap();
        s.visit_params_mut(&mut |p| p.value.fill(0.0));
        let y = s.forward(&Tensor::filled(&[8, 8, 1], 0.7)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compression_rounds_up() {
        let cfg = StreamConfig {
            compression: 0.3,
            ..StreamConfig::default()
        };
        assert_eq!(cfg.compressed(10), 3);
        assert_eq!(cfg.compressed(11), 4);
        assert_eq!(cfg.compressed(1), 1);
    }

    #[test]
    fn rejects_wrong_input_channels() {
        let s: Stream<f32> = Stream::new(&StreamConfig::default(), 2, &mut rng_for(0, "t")).unwrap();
        assert!(s.forward(&Tensor::zeros(&[16, 16, 3])).is_err());
    }
}
