//! Histogram of oriented gradients and its line-glyph rendering.

use crate::media::{FloatImage, Image};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HogParams {
    /// Cell side in pixels.
    pub cell: usize,
    /// Unsigned orientation bins over `[0°, 180°)`.
    pub bins: usize,
    /// Block side in cells; blocks advance one cell at a time.
    pub block: usize,
}

impl Default for HogParams {
    fn default() -> Self {
        HogParams {
            cell: 8,
            bins: 9,
            block: 2,
        }
    }
}

const L2HYS_CLIP: f32 = 0.2;
const L2HYS_EPS: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct HogDescriptor {
    pub cells_x: usize,
    pub cells_y: usize,
    pub params: HogParams,
    /// Raw per-cell histograms, `[cells_y][cells_x][bins]`.
    pub histograms: Vec<f32>,
    /// L2-Hys normalized blocks, `[blocks_y][blocks_x][block][block][bins]`.
    pub blocks: Vec<f32>,
}

impl HogDescriptor {
    pub fn blocks_x(&self) -> usize {
        (self.cells_x + 1).saturating_sub(self.params.block)
    }

    pub fn blocks_y(&self) -> usize {
        (self.cells_y + 1).saturating_sub(self.params.block)
    }

    pub fn block_len(&self) -> usize {
        self.params.block * self.params.block * self.params.bins
    }

    pub fn histogram(&self, cx: usize, cy: usize) -> &[f32] {
        let b = self.params.bins;
        let i = (cy * self.cells_x + cx) * b;
        &self.histograms[i..i + b]
    }

    pub fn block(&self, bx: usize, by: usize) -> &[f32] {
        let n = self.block_len();
        let i = (by * self.blocks_x() + bx) * n;
        &self.blocks[i..i + n]
    }

    /// Per cell and bin, the maximum normalized value over every block that
    /// covers the cell. Cells not covered by any block keep their raw
    /// histogram rescaled to unit L2 norm.
    pub fn cell_strengths(&self) -> Vec<f32> {
        let (bins, blk) = (self.params.bins, self.params.block);
        let mut out = vec![0.0f32; self.histograms.len()];
        let mut covered = vec![false; self.cells_x * self.cells_y];
        for by in 0..self.blocks_y() {
            for bx in 0..self.blocks_x() {
                let block = self.block(bx, by);
                for dy in 0..blk {
                    for dx in 0..blk {
                        let cell = (by + dy) * self.cells_x + bx + dx;
                        covered[cell] = true;
                        let src = &block[(dy * blk + dx) * bins..][..bins];
                        for (o, &v) in out[cell * bins..][..bins].iter_mut().zip(src) {
                            *o = o.max(v);
                        }
                    }
                }
            }
        }
        for (cell, _) in covered.iter().enumerate().filter(|(_, c)| !**c) {
            let h = &self.histograms[cell * bins..][..bins];
            let norm = (h.iter().map(|v| v * v).sum::<f32>() + L2HYS_EPS * L2HYS_EPS).sqrt();
            for (o, v) in out[cell * bins..][..bins].iter_mut().zip(h) {
                *o = v / norm;
            }
        }
        out
    }
}

/// Unsigned orientation in degrees, `[0, 180)`.
fn orientation(gx: f32, gy: f32) -> f32 {
    let deg = gy.atan2(gx).to_degrees().rem_euclid(180.0);
    if deg >= 180.0 {
        0.0
    } else {
        deg
    }
}

/// Adds `weight` split linearly between the two bins whose centers
/// (`b * 180 / bins`) bracket `angle`.
pub(crate) fn vote(hist: &mut [f32], angle: f32, weight: f32) {
    let bins = hist.len();
    let pos = angle / (180.0 / bins as f32);
    let lo = pos.floor();
    let frac = pos - lo;
    let b0 = (lo as usize) % bins;
    let b1 = (b0 + 1) % bins;
    hist[b0] += weight * (1.0 - frac);
    hist[b1] += weight * frac;
}

fn l2hys(v: &mut [f32]) {
    let scale = |v: &mut [f32]| {
        let norm = (v.iter().map(|x| x * x).sum::<f32>() + L2HYS_EPS * L2HYS_EPS).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    };
    scale(v);
    v.iter_mut().for_each(|x| *x = x.min(L2HYS_CLIP));
    scale(v);
}

/// Centered-difference gradients with replicated borders: `(gx, gy)` planes.
pub(crate) fn gradients(image: &FloatImage) -> (Vec<f32>, Vec<f32>) {
    let n = image.width * image.height;
    let (mut gx, mut gy) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for y in 0..image.height as isize {
        for x in 0..image.width as isize {
            gx.push(image.clamped(x + 1, y) - image.clamped(x - 1, y));
            gy.push(image.clamped(x, y + 1) - image.clamped(x, y - 1));
        }
    }
    (gx, gy)
}

pub fn compute_hog(image: &FloatImage, params: &HogParams) -> Result<HogDescriptor> {
    if image.channels != 1 {
        return Err(Error::contract("hog: image must be single-channel"));
    }
    if params.cell == 0 || params.bins == 0 || params.block == 0 {
        return Err(Error::contract("hog: cell, bins and block must be positive"));
    }
    if image.width % params.cell != 0 || image.height % params.cell != 0 {
        return Err(Error::contract(format!(
            "hog: {}x{} is not divisible by cell size {}",
            image.width, image.height, params.cell
        )));
    }
    let (cells_x, cells_y) = (image.width / params.cell, image.height / params.cell);
    let bins = params.bins;
    let (gx, gy) = gradients(image);
    let mut histograms = vec![0.0f32; cells_x * cells_y * bins];
    for y in 0..image.height {
        for x in 0..image.width {
            let i = y * image.width + x;
            let mag = gx[i].hypot(gy[i]);
            if mag == 0.0 {
                continue;
            }
            let cell = (y / params.cell) * cells_x + x / params.cell;
            vote(&mut histograms[cell * bins..][..bins], orientation(gx[i], gy[i]), mag);
        }
    }

    let mut d = HogDescriptor {
        cells_x,
        cells_y,
        params: *params,
        histograms,
        blocks: Vec::new(),
    };
    normalize_blocks(&mut d);
    Ok(d)
}

/// Rebuilds `d.blocks` from `d.histograms`.
fn normalize_blocks(d: &mut HogDescriptor) {
    let blk = d.params.block;
    let mut blocks = Vec::with_capacity(d.blocks_x() * d.blocks_y() * d.block_len());
    for by in 0..d.blocks_y() {
        for bx in 0..d.blocks_x() {
            let start = blocks.len();
            for dy in 0..blk {
                for dx in 0..blk {
                    blocks.extend_from_slice(d.histogram(bx + dx, by + dy));
                }
            }
            l2hys(&mut blocks[start..]);
        }
    }
    d.blocks = blocks;
}

/// Draws, for each cell and bin, a line through the cell center
/// perpendicular to the bin's gradient orientation (i.e. along the edge),
/// with intensity equal to the cell strength. Overlaps take the maximum and
/// the result is stretched so the brightest pixel is 255.
pub fn render_hog(d: &HogDescriptor, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 || width % d.cells_x != 0 || height % d.cells_y != 0 {
        return Err(Error::contract(format!(
            "hog render: {width}x{height} is not a multiple of {}x{} cells",
            d.cells_x, d.cells_y
        )));
    }
    let (tw, th) = (width / d.cells_x, height / d.cells_y);
    let bins = d.params.bins;
    let strengths = d.cell_strengths();
    let mut canvas = vec![0.0f32; width * height];
    let radius = tw.min(th) as f32 / 2.0;
    let steps = (4.0 * radius).ceil().max(1.0) as i32;
    for cy in 0..d.cells_y {
        for cx in 0..d.cells_x {
            let (x0, y0) = (cx * tw, cy * th);
            let (mx, my) = (x0 as f32 + tw as f32 / 2.0, y0 as f32 + th as f32 / 2.0);
            for b in 0..bins {
                let s = strengths[(cy * d.cells_x + cx) * bins + b];
                if s <= 0.0 {
                    continue;
                }
                let edge = (b as f32 * 180.0 / bins as f32 + 90.0).to_radians();
                let (dx, dy) = (edge.cos(), edge.sin());
                for k in -steps..=steps {
                    let t = k as f32 * radius / steps as f32;
                    let px = (mx + t * dx).floor().clamp(x0 as f32, (x0 + tw - 1) as f32) as usize;
                    let py = (my + t * dy).floor().clamp(y0 as f32, (y0 + th - 1) as f32) as usize;
                    let p = &mut canvas[py * width + px];
                    *p = p.max(s);
                }
            }
        }
    }
    let peak = canvas.iter().fold(0.0f32, |m, &v| m.max(v));
    let pixels = canvas
        .iter()
        .map(|&v| if peak > 0.0 { (v / peak * 255.0).round() as u8 } else { 0 })
        .collect();
    Image::new(width, height, 1, pixels)
}
