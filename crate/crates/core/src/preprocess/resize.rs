//! Bilinear resampling with half-pixel centers (align-corners off) and
//! clamped borders.

use crate::media::{FloatImage, Image};
use crate::{Error, Result};

#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(src - 1),
                frac: (s - lo as f64) as f32,
            }
        })
        .collect()
}

fn resample(src: &[f32], sw: usize, sh: usize, channels: usize, dw: usize, dh: usize) -> Vec<f32> {
    let xs = taps(sw, dw);
    let ys = taps(sh, dh);
    let mut out = Vec::with_capacity(dw * dh * channels);
    for ty in &ys {
        let row0 = &src[ty.lo * sw * channels..(ty.lo + 1) * sw * channels];
        let row1 = &src[ty.hi * sw * channels..(ty.hi + 1) * sw * channels];
        for tx in &xs {
            for c in 0..channels {
                let a = row0[tx.lo * channels + c];
                let b = row0[tx.hi * channels + c];
                let p = row1[tx.lo * channels + c];
                let q = row1[tx.hi * channels + c];
                let top = a * (1.0 - tx.frac) + b * tx.frac;
                let bottom = p * (1.0 - tx.frac) + q * tx.frac;
                out.push(top * (1.0 - ty.frac) + bottom * ty.frac);
            }
        }
    }
    out
}

pub fn resize_bilinear_f32(image: &FloatImage, width: usize, height: usize) -> Result<FloatImage> {
    if width == 0 || height == 0 {
        return Err(Error::contract(format!("resize target {width}x{height}")));
    }
    if width == image.width && height == image.height {
        return Ok(image.clone());
    }
    let data = resample(&image.data, image.width, image.height, image.channels, width, height);
    FloatImage::new(width, height, image.channels, data)
}

/// 8-bit resize; interpolated values are rounded to nearest.
pub fn resize_bilinear(image: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::contract(format!("resize target {width}x{height}")));
    }
    let src: Vec<f32> = image.pixels().iter().map(|&p| f32::from(p)).collect();
    let data = resample(&src, image.width(), image.height(), image.channels(), width, height);
    let pixels = data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Image::new(width, height, image.channels(), pixels)
}
