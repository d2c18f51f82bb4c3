use std::fmt;
use std::str::FromStr;

use crate::preprocess::FrameInputs;
use crate::rng::rng_for;
use crate::tensor::{softmax, GlobalAvgPool, Linear, Module, Param, Real, Tensor};
use crate::{Error, Result};

use super::stream::{Stream, StreamConfig};

/// Stream inputs, in the order the streams are stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    /// Spatial stream (`a`).
    Rgb,
    /// Temporal stream (`b`).
    Flow,
    /// Object-level stream (`c`).
    Hog,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rgb, Modality::Flow, Modality::Hog];

    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Flow => 2,
            Modality::Hog => 1,
        }
    }
}

/// All three streams fused, or a single-stream ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamMode {
    Fused,
    Only(Modality),
}

impl StreamMode {
    pub fn modalities(self) -> Vec<Modality> {
        match self {
            StreamMode::Fused => Modality::ALL.to_vec(),
            StreamMode::Only(m) => vec![m],
        }
    }
}

impl fmt::Display for StreamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StreamMode::Fused => "fused",
            StreamMode::Only(Modality::Rgb) => "rgb",
            StreamMode::Only(Modality::Flow) => "flow",
            StreamMode::Only(Modality::Hog) => "hog",
        })
    }
}

impl FromStr for StreamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(StreamMode::Fused),
            "rgb" => Ok(StreamMode::Only(Modality::Rgb)),
            "flow" => Ok(StreamMode::Only(Modality::Flow)),
            "hog" => Ok(StreamMode::Only(Modality::Hog)),
            _ => Err(Error::contract(format!("unknown stream mode {s:?} (fused|rgb|flow|hog)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub stream: StreamConfig,
    pub mode: StreamMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::contract("model: num_classes must be >= 1"));
        }
        self.stream.validate()
    }

    /// Trainable scalars of a model built from this config.
    pub fn param_count(&self) -> usize {
        let streams: usize = self.mode.modalities().iter().map(|m| self.stream.param_count(m.channels())).sum();
        streams + (self.head_inputs() + 1) * self.num_classes
    }

    /// Width of the pooled vector fed to the head.
    pub fn head_inputs(&self) -> usize {
        self.mode.modalities().len() * self.stream.output_channels()
    }
}

/// A batch of stream inputs, each `[N, S, S, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBatch<T = f32> {
    pub rgb: Tensor<T>,
    pub flow: Tensor<T>,
    pub hog: Tensor<T>,
}

impl FrameBatch<f32> {
    pub fn from_inputs(items: &[&FrameInputs]) -> Result<Self> {
        let col = |f: fn(&FrameInputs) -> &Tensor| -> Result<Tensor> {
            Tensor::stack(&items.iter().map(|i| f(i)).collect::<Vec<_>>())
        };
        Ok(FrameBatch {
            rgb: col(|i| &i.rgb)?,
            flow: col(|i| &i.flow)?,
            hog: col(|i| &i.hog)?,
        })
    }
}

impl<T: Real> FrameBatch<T> {
    pub fn cast<U: Real>(&self) -> FrameBatch<U> {
        FrameBatch {
            rgb: self.rgb.cast(),
            flow: self.flow.cast(),
            hog: self.hog.cast(),
        }
    }

    pub fn get(&self, m: Modality) -> &Tensor<T> {
        match m {
            Modality::Rgb => &self.rgb,
            Modality::Flow => &self.flow,
            Modality::Hog => &self.hog,
        }
    }
}

/// Channel-interleaved fusion: for source channel `d` (0-based) the output
/// holds `b` at `3d`, `c` at `3d+1` and `a` at `3d+2`.
pub fn concat_fuse<T: Real>(a: &Tensor<T>, b: &Tensor<T>, c: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() || a.shape() != c.shape() {
        return Err(Error::contract(format!(
            "concat_fuse: shapes {:?}, {:?}, {:?} differ",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let mut data = Vec::with_capacity(3 * a.len());
    for ((&x, &y), &z) in a.data().iter().zip(b.data()).zip(c.data()) {
        data.extend_from_slice(&[y, z, x]);
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") *= 3;
    Tensor::from_vec(&shape, data)
}

/// Inverse of [`concat_fuse`]: returns `(a, b, c)`.
pub fn deinterleave<T: Real>(y: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let last = *y.shape().last().expect("rank >= 1");
    if last % 3 != 0 {
        return Err(Error::contract(format!("deinterleave: {last} channels is not a multiple of 3")));
    }
    let n = y.len() / 3;
    let (mut a, mut b, mut c) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for t in y.data().chunks(3) {
        b.push(t[0]);
        c.push(t[1]);
        a.push(t[2]);
    }
    let mut shape = y.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") /= 3;
    Ok((
        Tensor::from_vec(&shape, a)?,
        Tensor::from_vec(&shape, b)?,
        Tensor::from_vec(&shape, c)?,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_id: usize,
    /// Maximum softmax probability.
    pub confidence: f32,
    pub probabilities: Vec<f32>,
}

impl Prediction {
    /// Ties go to the lowest class index.
    pub fn from_probabilities(probabilities: Vec<f32>) -> Self {
        let (class_id, confidence) = probabilities
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        Prediction {
            class_id,
            confidence,
            probabilities,
        }
    }
}

/// Three identical DenseNet-BC streams (RGB, flow, HOG), interleaved fusion,
/// global average pooling and a fully-connected softmax head. An ablation
/// model holds a single stream and skips fusion.
#[derive(Clone, Debug)]
pub struct ThreeStreamModel<T = f32> {
    pub config: ModelConfig,
    /// One stream per entry of `config.mode.modalities()`, in that order.
    pub streams: Vec<Stream<T>>,
    pub head: Linear<T>,
    pool: GlobalAvgPool,
    /// Feature-map shape recorded by `forward_train`.
    feature_shape: Option<Vec<usize>>,
}

impl<T: Real> ThreeStreamModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "model_init");
        let streams = config
            .mode
            .modalities()
            .into_iter()
            .map(|m| Stream::new(&config.stream, m.channels(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        // Identical configs make identical feature maps; check anyway.
        let d = streams[0].output_channels();
        if streams.iter().any(|s| s.output_channels() != d) {
            return Err(Error::contract("streams disagree on feature depth"));
        }
        let head = Linear::new(streams.len() * d, config.num_classes, &mut rng);
        Ok(ThreeStreamModel {
            config,
            streams,
            head,
            pool: GlobalAvgPool::new(),
            feature_shape: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Exact number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.param_count()
    }

    fn fuse(&self, maps: Vec<Tensor<T>>) -> Result<Tensor<T>> {
        match maps.as_slice() {
            [a, b, c] => concat_fuse(a, b, c),
            [single] => Ok(single.clone()),
            _ => unreachable!("one or three streams"),
        }
    }

    /// Fused feature map before pooling.
    pub fn features(&self, batch: &FrameBatch<T>) -> Result<Tensor<T>> {
        let mods = self.config.mode.modalities();
        let maps = if self.streams.len() == 3 {
            let (a, (b, c)) = rayon::join(
                || self.streams[0].forward(batch.get(mods[0])),
                || {
                    rayon::join(
                        || self.streams[1].forward(batch.get(mods[1])),
                        || self.streams[2].forward(batch.get(mods[2])),
                    )
                },
            );
            vec![a?, b?, c?]
        } else {
            vec![self.streams[0].forward(batch.get(mods[0]))?]
        };
        self.fuse(maps)
    }

    /// Eval-mode logits, `[N, K]` (or `[K]` for unbatched inputs).
    pub fn logits(&self, batch: &FrameBatch<T>) -> Result<Tensor<T>> {
        self.head.forward(&self.pool.forward(&self.features(batch)?)?)
    }

    pub fn forward_train(&mut self, batch: &FrameBatch<T>) -> Result<Tensor<T>> {
        let mods = self.config.mode.modalities();
        let maps = self
            .streams
            .iter_mut()
            .zip(&mods)
            .map(|(s, &m)| s.forward_train(batch.get(m)))
            .collect::<Result<Vec<_>>>()?;
        let fused = self.fuse(maps)?;
        self.feature_shape = Some(fused.shape().to_vec());
        let pooled = self.pool.forward_train(&fused)?;
        self.head.forward_train(&pooled)
    }

    /// Backpropagates `dlogits` through head, pooling, fusion and streams.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<()> {
        self.feature_shape
            .take()
            .ok_or_else(|| Error::contract("model: backward called before forward_train"))?;
        let dfused = self.pool.backward(&self.head.backward(dlogits)?)?;
        if self.streams.len() == 3 {
            let (da, db, dc) = deinterleave(&dfused)?;
            for (s, d) in self.streams.iter_mut().zip([da, db, dc]) {
                s.backward(&d)?;
            }
        } else {
            self.streams[0].backward(&dfused)?;
        }
        Ok(())
    }
}

impl<T: Real> Module<T> for ThreeStreamModel<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.streams.iter().for_each(|s| s.visit_params(f));
        self.head.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.streams.iter_mut().for_each(|s| s.visit_params_mut(f));
        self.head.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Tensor<T>)) {
        self.streams.iter().for_each(|s| s.visit_buffers(f));
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        self.streams.iter_mut().for_each(|s| s.visit_buffers_mut(f));
    }
}

impl ThreeStreamModel<f32> {
    pub fn predict_batch(&self, items: &[&FrameInputs]) -> Result<Vec<Prediction>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let probs = softmax(&self.logits(&FrameBatch::from_inputs(items)?)?)?;
        Ok(probs
            .data()
            .chunks(self.num_classes())
            .map(|p| Prediction::from_probabilities(p.to_vec()))
            .collect())
    }
}

/// Single-frame inference.
pub fn predict_frame(model: &ThreeStreamModel<f32>, inputs: &FrameInputs) -> Result<Prediction> {
    Ok(model.predict_batch(&[inputs])?.remove(0))
}
