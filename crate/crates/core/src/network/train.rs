use rand::seq::SliceRandom;

use crate::preprocess::FrameInputs;
use crate::rng::rng_for;
use crate::tensor::{softmax_cross_entropy, Module, Tensor};
use crate::{Error, Result};

use super::model::{FrameBatch, Prediction, ThreeStreamModel};

/// The sampled frame pairs of one clip and its class.
#[derive(Clone, Debug)]
pub struct LabeledClip {
    pub name: String,
    pub label: usize,
    pub frames: Vec<FrameInputs>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 10,
            batch: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
    /// Eval-mode frame accuracy on the training frames after the last epoch.
    pub train_accuracy: f64,
}

/// Mini-batch SGD with momentum on softmax cross-entropy:
/// `v ← μ·v + g + λ·w`, `w ← w − lr·v`.
///
/// Frames are shuffled every epoch from a stream seeded by `config.seed`,
/// so the result is bit-reproducible.
pub fn train(model: &mut ThreeStreamModel<f32>, clips: &[LabeledClip], config: &TrainConfig) -> Result<TrainReport> {
    let samples: Vec<(&FrameInputs, usize)> = clips
        .iter()
        .flat_map(|c| c.frames.iter().map(move |f| (f, c.label)))
        .collect();
    if samples.is_empty() {
        return Err(Error::contract("train: empty dataset"));
    }
    if config.batch == 0 {
        return Err(Error::contract("train: batch size must be >= 1"));
    }
    if let Some(&(_, l)) = samples.iter().find(|(_, l)| *l >= model.num_classes()) {
        return Err(Error::contract(format!(
            "train: label {l} out of range for {} classes",
            model.num_classes()
        )));
    }
    let mut velocity: Vec<Tensor<f32>> = Vec::new();
    model.visit_params(&mut |p| velocity.push(Tensor::zeros(p.value.shape())));
    let mut rng = rng_for(config.seed, "train_shuffle");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for chunk in order.chunks(config.batch) {
            let inputs: Vec<&FrameInputs> = chunk.iter().map(|&i| samples[i].0).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| samples[i].1).collect();
            let batch = FrameBatch::from_inputs(&inputs)?;
            model.zero_grad();
            let logits = model.forward_train(&batch)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            model.backward(&dlogits)?;
            total += f64::from(loss) * chunk.len() as f64;
            let mut i = 0;
            model.visit_params_mut(&mut |p| {
                let v = velocity[i].data_mut();
                for ((vv, w), g) in v.iter_mut().zip(p.value.data_mut()).zip(p.grad.data()) {
                    *vv = config.momentum * *vv + *g + config.weight_decay * *w;
                    *w -= config.lr * *vv;
                }
                i += 1;
            });
        }
        let mean = total / samples.len() as f64;
        log::info!("epoch {}/{}: loss {mean:.5}", epoch + 1, config.epochs);
        if !mean.is_finite() {
            return Err(Error::contract(format!("train: loss diverged at epoch {}", epoch + 1)));
        }
        history.push(mean);
    }
    let inputs: Vec<&FrameInputs> = samples.iter().map(|s| s.0).collect();
    let preds = predict_all(model, &inputs)?;
    let correct = preds.iter().zip(&samples).filter(|(p, s)| p.class_id == s.1).count();
    Ok(TrainReport {
        loss_history: history,
        train_accuracy: correct as f64 / samples.len() as f64,
    })
}

/// Eval-mode predictions in chunks of 32 frames.
pub fn predict_all(model: &ThreeStreamModel<f32>, inputs: &[&FrameInputs]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(32) {
        out.extend(model.predict_batch(chunk)?);
    }
    Ok(out)
}
