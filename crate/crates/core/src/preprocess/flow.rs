//! Coarse-to-fine Horn–Schunck optical flow.
//!
//! Both frames are scaled to `[0, 255]`, Gaussian pyramids are built, and the
//! flow is refined from the coarsest level down. At each level `next` is
//! warped by the current estimate and the linearized Horn–Schunck system is
//! relaxed with Jacobi sweeps, with smoothness acting on the total flow.

use super::resize::resize_bilinear_f32;
use crate::media::{FloatImage, FlowField};
use crate::{Error, Result};

/// Levels stop once either side would drop below this many pixels.
const MIN_LEVEL_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    pub pyramid_levels: usize,
    /// Downscale factor between consecutive levels, in `(0, 1)`.
    pub scale: f32,
    /// Smoothness weight on `[0, 255]` intensities.
    pub alpha: f32,
    /// Jacobi sweeps per level.
    pub iterations: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            pyramid_levels: 4,
            scale: 0.5,
            alpha: 15.0,
            iterations: 50,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0 {
            return Err(Error::contract("flow: pyramid_levels must be >= 1"));
        }
        if !(self.scale > 0.0 && self.scale < 1.0) {
            return Err(Error::contract("flow: scale must be in (0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::contract("flow: alpha must be positive"));
        }
        Ok(())
    }
}

/// 5-tap binomial blur, border-replicated, separable.
fn blur(img: &FloatImage) -> FloatImage {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let horiz = FloatImage::from_fn(img.width, img.height, |x, y| {
        let (x, y) = (x as isize, y as isize);
        // Symmetric pairing keeps left-right mirroring exact.
        K[2] * img.clamped(x, y)
            + K[1] * (img.clamped(x - 1, y) + img.clamped(x + 1, y))
            + K[0] * (img.clamped(x - 2, y) + img.clamped(x + 2, y))
    });
    FloatImage::from_fn(img.width, img.height, |x, y| {
        let (x, y) = (x as isize, y as isize);
        K[2] * horiz.clamped(x, y)
            + K[1] * (horiz.clamped(x, y - 1) + horiz.clamped(x, y + 1))
            + K[0] * (horiz.clamped(x, y - 2) + horiz.clamped(x, y + 2))
    })
}

fn pyramid(base: FloatImage, params: &FlowParams) -> Result<Vec<FloatImage>> {
    let mut levels = vec![base];
    while levels.len() < params.pyramid_levels {
        let last = levels.last().expect("non-empty");
        let w = (last.width as f32 * params.scale).round() as usize;
        let h = (last.height as f32 * params.scale).round() as usize;
        if w < MIN_LEVEL_SIDE || h < MIN_LEVEL_SIDE {
            break;
        }
        let next = resize_bilinear_f32(&blur(last), w, h)?;
        levels.push(next);
    }
    Ok(levels)
}

/// Bilinear sample with clamped coordinates.
fn sample(img: &FloatImage, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (img.width - 1) as f32);
    let y = y.clamp(0.0, (img.height - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
    let bottom = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn warp(img: &FloatImage, u: &[f32], v: &[f32]) -> FloatImage {
    FloatImage::from_fn(img.width, img.height, |x, y| {
        let i = y * img.width + x;
        sample(img, x as f32 + u[i], y as f32 + v[i])
    })
}

/// Horn–Schunck neighborhood average: 1/6 for edge neighbors, 1/12 for
/// diagonal neighbors, border-replicated.
fn neighbor_average(field: &[f32], w: usize, h: usize) -> Vec<f32> {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        field[y * w + x]
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let edge = (at(x - 1, y) + at(x + 1, y)) + (at(x, y - 1) + at(x, y + 1));
            let diag = (at(x - 1, y - 1) + at(x + 1, y - 1)) + (at(x - 1, y + 1) + at(x + 1, y + 1));
            out.push(edge / 6.0 + diag / 12.0);
        }
    }
    out
}

/// Linearized Horn–Schunck problem at one pyramid level.
///
/// The data term is linearized about the warp flow `(u0, v0)`:
/// `Ix (u - u0) + Iy (v - v0) + It = 0`.
#[derive(Clone, Debug)]
pub struct HornSchunckLevel {
    pub width: usize,
    pub height: usize,
    pub ix: Vec<f32>,
    pub iy: Vec<f32>,
    pub it: Vec<f32>,
    pub u0: Vec<f32>,
    pub v0: Vec<f32>,
}

impl HornSchunckLevel {
    /// Central-difference gradients averaged over `prev` and the warped
    /// `next`; temporal derivative `warped - prev`.
    pub fn new(prev: &FloatImage, warped: &FloatImage, u0: Vec<f32>, v0: Vec<f32>) -> Self {
        let (w, h) = (prev.width, prev.height);
        let mut ix = Vec::with_capacity(w * h);
        let mut iy = Vec::with_capacity(w * h);
        let mut it = Vec::with_capacity(w * h);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let dx = |img: &FloatImage| (img.clamped(x + 1, y) - img.clamped(x - 1, y)) * 0.5;
                let dy = |img: &FloatImage| (img.clamped(x, y + 1) - img.clamped(x, y - 1)) * 0.5;
                ix.push((dx(prev) + dx(warped)) * 0.5);
                iy.push((dy(prev) + dy(warped)) * 0.5);
                it.push(warped.clamped(x, y) - prev.clamped(x, y));
            }
        }
        HornSchunckLevel {
            width: w,
            height: h,
            ix,
            iy,
            it,
            u0,
            v0,
        }
    }

    /// One Jacobi sweep:
    /// `u' = ū - Ix·r / (α² + Ix² + Iy²)`, `v' = v̄ - Iy·r / (α² + Ix² + Iy²)`
    /// with `r = Ix (ū - u0) + Iy (v̄ - v0) + It`.
    pub fn jacobi_step(&self, u: &[f32], v: &[f32], alpha: f32) -> (Vec<f32>, Vec<f32>) {
        let ub = neighbor_average(u, self.width, self.height);
        let vb = neighbor_average(v, self.width, self.height);
        let a2 = alpha * alpha;
        let n = self.width * self.height;
        let mut nu = Vec::with_capacity(n);
        let mut nv = Vec::with_capacity(n);
        for i in 0..n {
            let (gx, gy) = (self.ix[i], self.iy[i]);
            let r = gx * (ub[i] - self.u0[i]) + gy * (vb[i] - self.v0[i]) + self.it[i];
            let k = r / (a2 + gx * gx + gy * gy);
            nu.push(ub[i] - gx * k);
            nv.push(vb[i] - gy * k);
        }
        (nu, nv)
    }
}

/// Upsamples a flow plane to `(w, h)` and rescales the displacements.
fn upsample_component(plane: &[f32], sw: usize, sh: usize, w: usize, h: usize, factor: f32) -> Result<Vec<f32>> {
    let img = FloatImage::new(sw, sh, 1, plane.to_vec())?;
    let up = resize_bilinear_f32(&img, w, h)?;
    Ok(up.data.into_iter().map(|v| v * factor).collect())
}

/// Dense flow from `prev` to `next` (single-channel, values in `[0, 1]`).
pub fn compute_flow(prev: &FloatImage, next: &FloatImage, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if (prev.width, prev.height) != (next.width, next.height) {
        return Err(Error::contract(format!(
            "flow: frame sizes differ ({}x{} vs {}x{})",
            prev.width, prev.height, next.width, next.height
        )));
    }
    if prev.channels != 1 || next.channels != 1 {
        return Err(Error::contract("flow: frames must be single-channel"));
    }
    let to255 = |img: &FloatImage| FloatImage {
        data: img.data.iter().map(|v| v * 255.0).collect(),
        ..img.clone()
    };
    let prev_pyr = pyramid(to255(prev), params)?;
    let next_pyr = pyramid(to255(next), params)?;

    let coarsest = prev_pyr.last().expect("non-empty");
    let mut size = (coarsest.width, coarsest.height);
    let mut u = vec![0.0f32; size.0 * size.1];
    let mut v = u.clone();
    for (p, n) in prev_pyr.iter().zip(&next_pyr).rev() {
        if (p.width, p.height) != size {
            let fx = p.width as f32 / size.0 as f32;
            let fy = p.height as f32 / size.1 as f32;
            u = upsample_component(&u, size.0, size.1, p.width, p.height, fx)?;
            v = upsample_component(&v, size.0, size.1, p.width, p.height, fy)?;
            size = (p.width, p.height);
        }
        let warped = warp(n, &u, &v);
        let level = HornSchunckLevel::new(p, &warped, u.clone(), v.clone());
        for _ in 0..params.iterations {
            let (nu, nv) = level.jacobi_step(&u, &v, params.alpha);
            u = nu;
            v = nv;
        }
    }
    let flow = FlowField::from_planes(prev.width, prev.height, &u, &v)?;
    if !flow.is_finite() {
        return Err(Error::contract("flow: non-finite result"));
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f32::consts::PI;

    /// Periodic sinusoidal texture shifted right by `dx` pixels.
    fn sinusoid(w: usize, h: usize, dx: f32) -> FloatImage {
        FloatImage::from_fn(w, h, |x, y| {
            let xs = x as f32 - dx;
            let t = 2.0 * PI / w as f32;
            0.5 + 0.2 * (3.0 * t * xs).sin() * (2.0 * t * y as f32).cos() + 0.15 * (t * (xs + 2.0 * y as f32)).sin()
        })
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = sinusoid(48, 40, 0.0);
        let flow = compute_flow(&f, &f, &FlowParams::default()).unwrap();
        assert!(flow.max_abs() <= 1e-6);
    }

    #[test]
    fn periodic_shift_recovers_translation() {
        let a = sinusoid(64, 64, 0.0);
        let b = sinusoid(64, 64, 1.0);
        let flow = compute_flow(&a, &b, &FlowParams::default()).unwrap();
        let (mu, mv) = flow.mean();
        assert!((mu - 1.0).abs() < 0.25 && mv.abs() < 0.25, "mean flow ({mu}, {mv})");
    }

    #[test]
    fn single_jacobi_step_matches_hand_evaluation() {
        // 3x3 with u = v = 0 everywhere except u = 1 at the center; alpha = 1.
        let mut u = vec![0.0f32; 9];
        u[4] = 1.0;
        let v = vec![0.0f32; 9];
        let level = HornSchunckLevel {
            width: 3,
            height: 3,
            ix: vec![2.0; 9],
            iy: vec![1.0; 9],
            it: vec![-3.0; 9],
            u0: vec![0.0; 9],
            v0: vec![0.0; 9],
        };
        let (nu, nv) = level.jacobi_step(&u, &v, 1.0);
        // Center: all neighbors zero -> ū = 0, r = -3, denom = 1 + 4 + 1 = 6.
        assert!((nu[4] - 1.0).abs() < 1e-6); // 0 - 2 * (-3 / 6)
        assert!((nv[4] - 0.5).abs() < 1e-6); // 0 - 1 * (-3 / 6)
        // Corner (0,0): replicated neighbors are the corner itself (0), (1,0), (0,1)
        // and the center as its only diagonal -> ū = 1/12.
        let ub = 1.0 / 12.0;
        let r = 2.0 * ub - 3.0;
        assert!((nu[0] - (ub - 2.0 * r / 6.0)).abs() < 1e-6);
        assert!((nv[0] - (0.0 - r / 6.0)).abs() < 1e-6);
        // Edge (1,0): center is an edge neighbor (1/6); no diagonal touches it.
        let ub = 1.0 / 6.0;
        let r = 2.0 * ub - 3.0;
        assert!((nu[1] - (ub - 2.0 * r / 6.0)).abs() < 1e-6);
    }

    #[test]
    fn mirrored_inputs_mirror_the_flow() {
        let a = sinusoid(40, 32, 0.0);
        let b = sinusoid(40, 32, 1.5);
        let flow = compute_flow(&a, &b, &FlowParams::default()).unwrap();
        let mflow = compute_flow(&a.flip_horizontal(), &b.flip_horizontal(), &FlowParams::default()).unwrap();
        for y in 0..32 {
            for x in 0..40 {
                let mx = 39 - x;
                assert!((flow.u(x, y) + mflow.u(mx, y)).abs() <= 1e-3);
                assert!((flow.v(x, y) - mflow.v(mx, y)).abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn rejects_mismatched_frames() {
        let a = FloatImage::filled(8, 8, 1, 0.0);
        let b = FloatImage::filled(9, 8, 1, 0.0);
        assert!(matches!(compute_flow(&a, &b, &FlowParams::default()), Err(Error::Contract(_))));
    }
}
