//! Per-stage latency of the per-frame pipeline: resize, flow, HOG, stream
//! forward passes and fusion + head.

use std::fmt::Write as _;
use std::time::Instant;

use crate::dataset::Texture;
use crate::media::{FloatImage, Image};
use crate::network::{concat_fuse, FrameBatch, ModelConfig, StreamConfig, StreamMode, ThreeStreamModel};
use crate::preprocess::{compute_flow, compute_hog, render_hog, resize_bilinear, FrameInputs, PreprocessConfig};
use crate::tensor::{softmax, GlobalAvgPool};
use crate::{Error, Result};

/// Budget for resize + flow + HOG per frame pair, in milliseconds.
pub const PREPROCESS_BUDGET_MS: f64 = 140.0;

pub const STAGES: [&str; 5] = ["resize", "flow", "hog", "stream_forward", "fuse_head"];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub frames: usize,
    /// Source frame width and height before resizing.
    pub source_size: (usize, usize),
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            frames: 20,
            source_size: (320, 240),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig {
                num_classes: 12,
                stream: StreamConfig::default(),
                mode: StreamMode::Fused,
            },
            seed: 0,
        }
    }
}

/// Timings of one stage in milliseconds, one sample per frame pair.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTimes {
    pub name: &'static str,
    pub samples_ms: Vec<f64>,
}

impl StageTimes {
    pub fn mean(&self) -> f64 {
        self.samples_ms.iter().sum::<f64>() / self.samples_ms.len().max(1) as f64
    }

    /// Nearest-rank 95th percentile.
    pub fn p95(&self) -> f64 {
        let mut s = self.samples_ms.clone();
        s.sort_by(f64::total_cmp);
        let rank = ((0.95 * s.len() as f64).ceil() as usize).clamp(1, s.len().max(1));
        s.get(rank - 1).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub stages: Vec<StageTimes>,
    pub target_size: usize,
}

impl BenchReport {
    /// Mean resize + flow + HOG time per pair.
    pub fn preprocess_mean_ms(&self) -> f64 {
        self.stages[..3].iter().map(StageTimes::mean).sum()
    }

    pub fn within_budget(&self) -> bool {
        self.preprocess_mean_ms() <= PREPROCESS_BUDGET_MS
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16}{:>8}{:>12}{:>12}\n", "stage", "n", "mean_ms", "p95_ms");
        for s in &self.stages {
            let _ = writeln!(out, "{:<16}{:>8}{:>12.3}{:>12.3}", s.name, s.samples_ms.len(), s.mean(), s.p95());
        }
        let _ = writeln!(
            out,
            "preprocess total (resize+flow+hog) at {0}x{0}: {1:.3} ms mean, budget {2} ms: {3}",
            self.target_size,
            self.preprocess_mean_ms(),
            PREPROCESS_BUDGET_MS,
            if self.within_budget() { "ok" } else { "OVER BUDGET" }
        );
        out
    }
}

fn source_frame(tex: &Texture, (w, h): (usize, usize), shift: f32) -> Image {
    let px = (0..w * h)
        .flat_map(|i| {
            let g = tex.sample((i % w) as f32 - shift, (i / w) as f32);
            let v = (g * 255.0).round() as u8;
            [v, v / 2 + 60, 255 - v]
        })
        .collect();
    Image::new(w, h, 3, px).expect("buffer sized to the frame")
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Times every stage on `config.frames` synthetic frame pairs translating by one pixel.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.preprocess.validate()?;
    if config.frames == 0 {
        return Err(Error::contract("bench needs at least one frame"));
    }
    if config.model.mode != StreamMode::Fused {
        return Err(Error::contract("bench times the fused model"));
    }
    let model = ThreeStreamModel::<f32>::new(config.model.clone(), config.seed)?;
    let pool = GlobalAvgPool::new();
    let tex = Texture::new(config.seed, 12.0);
    let s = config.preprocess.target_size;
    let mut stages: Vec<StageTimes> = STAGES
        .iter()
        .map(|&name| StageTimes {
            name,
            samples_ms: Vec::with_capacity(config.frames),
        })
        .collect();
    for i in 0..config.frames {
        let prev = source_frame(&tex, config.source_size, i as f32);
        let next = source_frame(&tex, config.source_size, i as f32 + 1.0);

        let t = Instant::now();
        let a = resize_bilinear(&prev, s, s)?;
        let b = resize_bilinear(&next, s, s)?;
        stages[0].samples_ms.push(ms(t));

        let (ga, gb): (FloatImage, FloatImage) = (a.to_unit_float().to_gray(), b.to_unit_float().to_gray());
        let t = Instant::now();
        let flow = compute_flow(&ga, &gb, &config.preprocess.flow)?;
        stages[1].samples_ms.push(ms(t));

        let t = Instant::now();
        let hog = render_hog(&compute_hog(&ga, &config.preprocess.hog)?, s, s)?;
        stages[2].samples_ms.push(ms(t));

        let inputs = FrameInputs::from_parts(&a, &flow, &hog)?;
        let batch = FrameBatch::from_inputs(&[&inputs])?;
        let mods = config.model.mode.modalities();
        let t = Instant::now();
        let maps = model
            .streams
            .iter()
            .zip(&mods)
            .map(|(st, &m)| st.forward(batch.get(m)))
            .collect::<Result<Vec<_>>>()?;
        stages[3].samples_ms.push(ms(t));

        let t = Instant::now();
        let fused = concat_fuse(&maps[0], &maps[1], &maps[2])?;
        let probs = softmax(&model.head.forward(&pool.forward(&fused)?)?)?;
        stages[4].samples_ms.push(ms(t));
        debug_assert_eq!(probs.len(), config.model.num_classes);
    }
    Ok(BenchReport { stages, target_size: s })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles() {
        let st = StageTimes {
            name: "x",
            samples_ms: (1..=100).map(f64::from).collect(),
        };
        assert_eq!(st.p95(), 95.0);
        assert_eq!(st.mean(), 50.5);
    }

    #[test]
    fn all_stages_have_one_sample_per_frame() {
        let cfg = BenchConfig {
            frames: 3,
            source_size: (64, 48),
            preprocess: PreprocessConfig {
                target_size: 32,
                ..PreprocessConfig::default()
            },
            model: ModelConfig {
                num_classes: 4,
                stream: StreamConfig {
                    growth: 2,
                    blocks: vec![1, 1],
                    ..StreamConfig::default()
                },
                mode: StreamMode::Fused,
            },
            seed: 1,
        };
        let r = run_bench(&cfg).unwrap();
        assert_eq!(r.stages.iter().map(|s| s.name).collect::<Vec<_>>(), STAGES);
        assert!(r.stages.iter().all(|s| s.samples_ms.len() == 3));
        assert!(r.to_table().contains("fuse_head"));
    }
}
