//! Frame pair → three stream inputs (RGB, optical flow, HOG rendering).

mod flow;
mod hog;
mod resize;
mod sample;

pub use flow::{compute_flow, FlowParams, HornSchunckLevel};
pub use hog::{compute_hog, render_hog, HogDescriptor, HogParams};
pub use resize::{resize_bilinear, resize_bilinear_f32};
pub use sample::sample_frames;

pub use crate::media::FlowField;
use crate::media::Image;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub target_size: usize,
    pub sample_fps: u32,
    pub flow: FlowParams,
    pub hog: HogParams,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_size: 112,
            sample_fps: 3,
            flow: FlowParams::default(),
            hog: HogParams::default(),
            seed: 0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size < 16 {
            return Err(Error::contract("target_size must be >= 16"));
        }
        if self.sample_fps == 0 {
            return Err(Error::contract("sample_fps must be >= 1"));
        }
        if self.hog.cell == 0 || self.target_size % self.hog.cell != 0 {
            return Err(Error::contract(format!(
                "target_size {} is not a multiple of the HOG cell {}",
                self.target_size, self.hog.cell
            )));
        }
        self.flow.validate()
    }
}

/// Network-ready inputs for one frame pair, all `[S, S, C]` in channel-last layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInputs {
    /// RGB in `[0, 1]`.
    pub rgb: Tensor,
    /// Raw `(u, v)` displacements in pixels.
    pub flow: Tensor,
    /// HOG rendering in `[0, 1]`.
    pub hog: Tensor,
}

impl FrameInputs {
    /// Assembles inputs from a resized RGB frame, its flow and HOG rendering.
    pub fn from_parts(rgb: &Image, flow: &FlowField, hog: &Image) -> Result<Self> {
        let size = (rgb.width(), rgb.height());
        if (flow.width(), flow.height()) != size || (hog.width(), hog.height()) != size {
            return Err(Error::contract("frame inputs differ in size"));
        }
        if rgb.channels() != 3 || hog.channels() != 1 {
            return Err(Error::contract("expected RGB frame and gray HOG rendering"));
        }
        Ok(FrameInputs {
            rgb: rgb.to_unit_float().to_tensor(),
            flow: flow.to_tensor(),
            hog: hog.to_unit_float().to_tensor(),
        })
    }
}

/// Intermediate products of [`preprocess_pair`], kept for caching.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedPair {
    /// `prev` resized to the target size.
    pub rgb: Image,
    pub flow: FlowField,
    pub hog: Image,
}

impl PreprocessedPair {
    pub fn inputs(&self) -> FrameInputs {
        FrameInputs::from_parts(&self.rgb, &self.flow, &self.hog).expect("sizes agree by construction")
    }
}

/// Resizes both frames, computes flow between their grayscale versions and
/// renders the HOG of `prev`.
pub fn preprocess_pair(prev: &Image, next: &Image, config: &PreprocessConfig) -> Result<PreprocessedPair> {
    config.validate()?;
    if (prev.width(), prev.height(), prev.channels()) != (next.width(), next.height(), next.channels()) {
        return Err(Error::contract("frame pair differs in size or channels"));
    }
    if prev.channels() != 3 {
        return Err(Error::contract("frames must be RGB"));
    }
    let s = config.target_size;
    let a = resize_bilinear(prev, s, s)?;
    let b = resize_bilinear(next, s, s)?;
    let ga = a.to_unit_float().to_gray();
    let gb = b.to_unit_float().to_gray();
    let flow = compute_flow(&ga, &gb, &config.flow)?;
    let hog = render_hog(&compute_hog(&ga, &config.hog)?, s, s)?;
    Ok(PreprocessedPair { rgb: a, flow, hog })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f32::consts::PI;

    /// Periodic texture translated by `dx` source pixels.
    fn frame(size: usize, dx: f32) -> Image {
        let px = (0..size * size)
            .flat_map(|i| {
                let (x, y) = ((i % size) as f32 - dx, (i / size) as f32);
                let t = 2.0 * PI / size as f32;
                let v = 0.5 + 0.25 * (2.0 * t * x).sin() * (3.0 * t * y).cos() + 0.2 * (t * (x + y)).cos();
                let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g / 2 + 40, 255 - g]
            })
            .collect();
        Image::new(size, size, 3, px).unwrap()
    }

    #[test]
    fn shapes_and_identical_frames() {
        let f = frame(64, 0.0);
        let cfg = PreprocessConfig::default();
        let out = preprocess_pair(&f, &f, &cfg).unwrap();
        let inputs = out.inputs();
        assert_eq!(inputs.rgb.shape(), &[112, 112, 3]);
        assert_eq!(inputs.flow.shape(), &[112, 112, 2]);
        assert_eq!(inputs.hog.shape(), &[112, 112, 1]);
        assert!(inputs.flow.max_abs() <= 1e-6);
        assert!(inputs.rgb.data().iter().chain(inputs.hog.data()).all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(preprocess_pair(&f, &f, &cfg).unwrap(), out);
    }

    #[test]
    fn translation_survives_resize_scaling() {
        // 2 px at 224 becomes 1 px at 112.
        let out = preprocess_pair(&frame(224, 0.0), &frame(224, 2.0), &PreprocessConfig::default()).unwrap();
        let (mu, mv) = out.flow.mean();
        assert!((mu - 1.0).abs() < 0.25 && mv.abs() < 0.25, "({mu}, {mv})");
    }

    #[test]
    fn validation() {
        let mut c = PreprocessConfig::default();
        c.target_size = 8;
        assert!(c.validate().is_err());
        c.target_size = 36;
        assert!(c.validate().is_err());
        c.target_size = 32;
        assert!(c.validate().is_ok());
    }
}
