//! Synthetic fine-grained actions: one shared texture disc over a static
//! background, moving differently per class. Frame 0 of every class looks
//! alike, so only the motion separates them.

use std::f32::consts::TAU;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::media::{write_clip, FlowField, Image};
use crate::rng::{derive_seed, rng_for};
use crate::{Error, Result};

use super::names::ClipId;
use super::split::{split_by_group, SplitManifest};

pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLIT_FILE: &str = "split.txt";
pub const CLIPS_DIR: &str = "clips";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Motion {
    /// Triangle-wave translation along x.
    RubHorizontal,
    /// Triangle-wave translation along y.
    RubVertical,
    /// Constant rotation, clockwise on screen (y axis points down).
    Clockwise,
    CounterClockwise,
}

impl Motion {
    pub const DEFAULT_CLASSES: [Motion; 4] = [
        Motion::RubHorizontal,
        Motion::RubVertical,
        Motion::Clockwise,
        Motion::CounterClockwise,
    ];

    /// The flow statistic whose sign identifies the direction of this motion:
    /// mean `u` or mean `v` for rubs, mean angular velocity about `center`
    /// (positive clockwise) for rotations.
    pub fn direction_statistic(self, flow: &FlowField, center: (f32, f32)) -> f64 {
        match self {
            Motion::RubHorizontal => flow.mean().0,
            Motion::RubVertical => flow.mean().1,
            Motion::Clockwise | Motion::CounterClockwise => {
                let mut sum = 0.0f64;
                for y in 0..flow.height() {
                    for x in 0..flow.width() {
                        let (rx, ry) = (x as f32 + 0.5 - center.0, y as f32 + 0.5 - center.1);
                        sum += f64::from(rx * flow.v(x, y) - ry * flow.u(x, y));
                    }
                }
                sum / (flow.width() * flow.height()) as f64
            }
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Motion::RubHorizontal => "rub_horizontal",
            Motion::RubVertical => "rub_vertical",
            Motion::Clockwise => "clockwise",
            Motion::CounterClockwise => "counter_clockwise",
        })
    }
}

/// Smooth random pattern in `[0, 1]`: a normalized sum of plane waves.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    waves: Vec<[f32; 4]>,
}

impl Texture {
    /// Waves with wavelengths between 0.7 and 1.4 times `wavelength` pixels.
    pub fn new(seed: u64, wavelength: f32) -> Self {
        let mut rng = rng_for(seed, "texture");
        let waves = (0..8)
            .map(|_| {
                let amp: f32 = rng.random_range(0.5..1.0);
                let dir: f32 = rng.random_range(0.0..TAU);
                let k = TAU / (wavelength * rng.random_range(0.7..1.4));
                let phase: f32 = rng.random_range(0.0..TAU);
                [amp, k * dir.cos(), k * dir.sin(), phase]
            })
            .collect();
        Texture { waves }
    }

    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let total: f32 = self.waves.iter().map(|w| w[0]).sum();
        let s: f32 = self.waves.iter().map(|w| w[0] * (w[1] * x + w[2] * y + w[3]).sin()).sum();
        0.5 + 0.45 * s / total
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// One class per entry, in class-index order.
    pub motions: Vec<Motion>,
    pub clips_per_class: usize,
    pub fps: u32,
    pub duration_s: f64,
    /// Square frame side in pixels.
    pub resolution: usize,
    /// Clips of each class are spread round-robin over groups `1..=groups`.
    pub groups: usize,
    pub texture_seed: u64,
    /// Speed of the moving texture in pixels per frame (at mid-radius for rotations).
    pub speed: f32,
    /// Frames between rub turning points.
    pub rub_half_period: u32,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            motions: Motion::DEFAULT_CLASSES.to_vec(),
            clips_per_class: 40,
            fps: 10,
            duration_s: 2.0,
            resolution: 64,
            groups: 10,
            texture_seed: 0,
            speed: 2.0,
            rub_half_period: 4,
            test_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 32 {
            return Err(Error::contract(format!(
                "synthetic resolution {} is below 32x32",
                self.resolution
            )));
        }
        if self.motions.is_empty() || self.motions.len() > usize::from(super::NUM_ACTION_CLASSES) {
            return Err(Error::contract("synthetic set needs 1..=12 classes"));
        }
        if self.clips_per_class == 0 || self.motions.len() * self.clips_per_class > 1000 {
            return Err(Error::contract("synthetic set needs 1..=1000 clips in total"));
        }
        if !(1..=99).contains(&self.groups) {
            return Err(Error::contract("groups must be in 1..=99"));
        }
        if self.fps == 0 || self.frame_count() < 2 {
            return Err(Error::contract("clips need a positive fps and at least two frames"));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) || self.rub_half_period == 0 {
            return Err(Error::contract("speed and rub_half_period must be positive"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::contract("test_fraction must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.motions.len()
    }

    pub fn frame_count(&self) -> usize {
        (f64::from(self.fps) * self.duration_s).round() as usize
    }

    fn radius(&self) -> f32 {
        0.3 * self.resolution as f32
    }

    fn texture(&self) -> Texture {
        Texture::new(self.texture_seed, self.radius() / 2.0)
    }

    /// Radians per frame; the texture at 70% of the radius moves at `speed`.
    fn angular_speed(&self) -> f32 {
        self.speed / (0.7 * self.radius())
    }

    /// Triangle wave through 0 at frame 0 with turning points every
    /// `rub_half_period` frames, so each frame step moves exactly `speed`.
    fn rub_offset(&self, t: u32) -> f32 {
        let p = self.rub_half_period;
        let amp = self.speed * p as f32;
        let s = (t + p) % (4 * p);
        let tri = if s < 2 * p { s as f32 - p as f32 } else { (3 * p) as f32 - s as f32 };
        amp * tri / p as f32
    }
}

/// Everything that distinguishes one synthetic clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSpec {
    pub id: ClipId,
    pub motion: Motion,
    /// Texture orientation at frame 0.
    pub base_angle: f32,
    /// Offset of the disc's rest position from the frame center.
    pub jitter: (f32, f32),
    /// Frames by which the rub wave is advanced.
    pub phase: u32,
}

impl ClipSpec {
    /// Disc center at `frame`.
    pub fn center(&self, cfg: &SynthConfig, frame: usize) -> (f32, f32) {
        let mid = cfg.resolution as f32 / 2.0;
        let (mut cx, mut cy) = (mid + self.jitter.0, mid + self.jitter.1);
        let off = cfg.rub_offset(frame as u32 + self.phase);
        match self.motion {
            Motion::RubHorizontal => cx += off,
            Motion::RubVertical => cy += off,
            _ => {}
        }
        (cx, cy)
    }

    /// Texture rotation at `frame` (positive is clockwise on screen).
    pub fn angle(&self, cfg: &SynthConfig, frame: usize) -> f32 {
        let w = cfg.angular_speed() * frame as f32;
        match self.motion {
            Motion::Clockwise => self.base_angle + w,
            Motion::CounterClockwise => self.base_angle - w,
            _ => self.base_angle,
        }
    }
}

/// Per-clip parameters for the whole set, in class then clip order.
pub fn clip_specs(cfg: &SynthConfig, seed: u64) -> Result<Vec<ClipSpec>> {
    cfg.validate()?;
    let mut specs = Vec::with_capacity(cfg.num_classes() * cfg.clips_per_class);
    for (class, &motion) in cfg.motions.iter().enumerate() {
        for i in 0..cfg.clips_per_class {
            let wash = (class * cfg.clips_per_class + i) as u16;
            let id = ClipId::new(wash, class as u8 + 1, (1 + i % cfg.groups) as u8)
                .map_err(|e| Error::contract(e.to_string()))?;
            let mut rng = rng_for(seed, &id.stem());
            let j = 0.05 * cfg.resolution as f32;
            specs.push(ClipSpec {
                id,
                motion,
                base_angle: rng.random_range(0.0..TAU),
                jitter: (rng.random_range(-j..=j), rng.random_range(-j..=j)),
                phase: rng.random_range(0..4 * cfg.rub_half_period),
            });
        }
    }
    Ok(specs)
}

/// Static low-contrast background, varying with the clip's group.
fn background(cfg: &SynthConfig, group: u8) -> Texture {
    Texture::new(
        derive_seed(cfg.texture_seed, &format!("background_{group}")),
        cfg.resolution as f32 / 3.0,
    )
}

fn render_with(cfg: &SynthConfig, spec: &ClipSpec, frame: usize, tex: &Texture, bg: &Texture) -> Image {
    let n = cfg.resolution;
    let r = cfg.radius();
    let (cx, cy) = spec.center(cfg, frame);
    let (s, c) = spec.angle(cfg, frame).sin_cos();
    let mut px = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            let b = 0.2 + 0.2 * bg.sample(fx, fy);
            let mut rgb = [b, b * 0.9 + 0.05, b * 0.8 + 0.1];
            let (dx, dy) = (fx - cx, fy - cy);
            let coverage = (r + 0.5 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0);
            if coverage > 0.0 {
                // Undo the rotation to find the texture coordinate.
                let (tx, ty) = (c * dx + s * dy, -s * dx + c * dy);
                let g = tex.sample(tx, ty);
                let fg = [0.25 + 0.7 * g, 0.2 + 0.5 * g, 0.65 - 0.35 * g];
                for (v, f) in rgb.iter_mut().zip(fg) {
                    *v += coverage * (f - *v);
                }
            }
            px.extend(rgb.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        }
    }
    Image::new(n, n, 3, px).expect("buffer sized to the frame")
}

pub fn render_frame(cfg: &SynthConfig, spec: &ClipSpec, frame: usize) -> Image {
    render_with(cfg, spec, frame, &cfg.texture(), &background(cfg, spec.id.group))
}

pub fn render_clip(cfg: &SynthConfig, spec: &ClipSpec) -> Vec<Image> {
    let tex = cfg.texture();
    let bg = background(cfg, spec.id.group);
    (0..cfg.frame_count())
        .map(|f| render_with(cfg, spec, f, &tex, &bg))
        .collect()
}

/// Exact motion from `frame` to `frame + 1` at every pixel center covered by
/// the disc at `frame`; zero on the background.
pub fn analytic_flow(cfg: &SynthConfig, spec: &ClipSpec, frame: usize) -> FlowField {
    let n = cfg.resolution;
    let r = cfg.radius();
    let (cx, cy) = spec.center(cfg, frame);
    let (nx, ny) = spec.center(cfg, frame + 1);
    let (s, c) = (spec.angle(cfg, frame + 1) - spec.angle(cfg, frame)).sin_cos();
    let mut data = vec![0.0f32; n * n * 2];
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let (rx, ry) = (c * dx - s * dy, s * dx + c * dy);
            let i = (y * n + x) * 2;
            data[i] = nx + rx - (cx + dx);
            data[i + 1] = ny + ry - (cy + dy);
        }
    }
    FlowField::from_interleaved(n, n, data).expect("buffer sized to the frame")
}

/// What [`generate_synthetic`] wrote.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub root: PathBuf,
    pub clips: Vec<ClipSpec>,
    pub split: SplitManifest,
}

impl SynthDataset {
    pub fn clip_dir(&self, id: &ClipId) -> PathBuf {
        self.root.join(CLIPS_DIR).join(id.stem())
    }
}

/// Renders every clip to `out_dir/clips/<stem>/`, then writes `labels.tsv`
/// (`name.avi<TAB>class index`) and a group-disjoint `split.txt`.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64, out_dir: impl AsRef<Path>) -> Result<SynthDataset> {
    let root = out_dir.as_ref().to_path_buf();
    let specs = clip_specs(cfg, seed)?;
    let clips_root = root.join(CLIPS_DIR);
    fs::create_dir_all(&clips_root).map_err(Error::io(&clips_root))?;
    specs.par_iter().try_for_each(|spec| {
        write_clip(clips_root.join(spec.id.stem()), cfg.fps, &render_clip(cfg, spec)).map(|_| ())
    })?;
    let labels: String = specs
        .iter()
        .map(|s| format!("{}\t{}\n", s.id, s.id.class_index()))
        .collect();
    let labels_path = root.join(LABELS_FILE);
    fs::write(&labels_path, labels).map_err(Error::io(&labels_path))?;
    let ids: Vec<ClipId> = specs.iter().map(|s| s.id).collect();
    let split = split_by_group(&ids, cfg.test_fraction, seed)?;
    let split_path = root.join(SPLIT_FILE);
    fs::write(&split_path, split.to_text()).map_err(Error::io(&split_path))?;
    Ok(SynthDataset {
        root,
        clips: specs,
        split,
    })
}
