//! Binary checkpoint, all integers little-endian:
//!
//! ```text
//! "TSM1"
//! u32 num_classes, u32 mode (0 fused, 1 rgb, 2 flow, 3 hog)
//! u32 growth, u32 block count, u32 layers per block..., u32 bottleneck factor
//! u64 compression (f64 bits), u32 batch_norm (0/1)
//! per tensor: u32 rank, u32 dims..., f32 values
//! ```
//!
//! Tensors follow the model's parameter traversal order, then its buffers.

use std::path::Path;

use crate::error::{FileKind, FormatError};
use crate::media::{read_bytes, write_bytes};
use crate::tensor::{Module, Tensor};
use crate::Result;

use super::model::{Modality, ModelConfig, StreamMode, ThreeStreamModel};
use super::stream::StreamConfig;

const MAGIC: &[u8; 4] = b"TSM1";

fn mode_code(m: StreamMode) -> u32 {
    match m {
        StreamMode::Fused => 0,
        StreamMode::Only(Modality::Rgb) => 1,
        StreamMode::Only(Modality::Flow) => 2,
        StreamMode::Only(Modality::Hog) => 3,
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    push_u32(out, t.rank());
    t.shape().iter().for_each(|&d| push_u32(out, d));
    t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
}

pub fn encode_checkpoint(model: &ThreeStreamModel<f32>) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = MAGIC.to_vec();
    push_u32(&mut out, cfg.num_classes);
    push_u32(&mut out, mode_code(cfg.mode) as usize);
    push_u32(&mut out, cfg.stream.growth);
    push_u32(&mut out, cfg.stream.blocks.len());
    cfg.stream.blocks.iter().for_each(|&b| push_u32(&mut out, b));
    push_u32(&mut out, cfg.stream.bottleneck_factor);
    out.extend_from_slice(&cfg.stream.compression.to_bits().to_le_bytes());
    push_u32(&mut out, usize::from(cfg.stream.batch_norm));
    model.visit_params(&mut |p| push_tensor(&mut out, &p.value));
    model.visit_buffers(&mut |t| push_tensor(&mut out, t));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, field: &str) -> Result<&[u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            FormatError::new(FileKind::Checkpoint, field, format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")) as usize)
    }
}

fn err(field: &str, msg: impl Into<String>) -> FormatError {
    FormatError::new(FileKind::Checkpoint, field, msg)
}

fn blocks_ok(c: &ModelConfig) -> bool {
    c.stream.blocks.iter().all(|&b| b <= 1024)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ThreeStreamModel<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(err("magic", "not a TSM1 checkpoint").into());
    }
    let num_classes = r.u32("num_classes")?;
    let mode = match r.u32("mode")? {
        0 => StreamMode::Fused,
        1 => StreamMode::Only(Modality::Rgb),
        2 => StreamMode::Only(Modality::Flow),
        3 => StreamMode::Only(Modality::Hog),
        m => return Err(err("mode", format!("unknown mode {m}")).into()),
    };
    let growth = r.u32("growth")?;
    let nblocks = r.u32("blocks")?;
    if nblocks == 0 || nblocks > 16 {
        return Err(err("blocks", format!("implausible block count {nblocks}")).into());
    }
    let blocks = (0..nblocks).map(|_| r.u32("blocks")).collect::<Result<Vec<_>, _>>()?;
    let bottleneck_factor = r.u32("bottleneck_factor")?;
    let compression = f64::from_bits(u64::from_le_bytes(r.take(8, "compression")?.try_into().expect("8 bytes")));
    let batch_norm = match r.u32("batch_norm")? {
        0 => false,
        1 => true,
        v => return Err(err("batch_norm", format!("expected 0 or 1, got {v}")).into()),
    };
    let config = ModelConfig {
        num_classes,
        stream: StreamConfig {
            growth,
            blocks,
            bottleneck_factor,
            compression,
            batch_norm,
        },
        mode,
    };
    // Refuse configs whose weights could not fit in the file before allocating.
    let small = growth <= 1024 && num_classes <= 1 << 16 && bottleneck_factor <= 64 && blocks_ok(&config);
    if config.validate().is_err() || !small || config.param_count() * 4 > bytes.len() {
        return Err(err("config", "invalid model configuration").into());
    }
    let mut model = ThreeStreamModel::new(config, 0)?;
    let mut failure: Option<FormatError> = None;
    let mut read_into = |t: &mut Tensor<f32>, r: &mut Reader| {
        if failure.is_some() {
            return;
        }
        let result = (|| {
            let rank = r.u32("tensor rank")?;
            if rank != t.rank() {
                return Err(err("tensor rank", format!("expected {}, got {rank}", t.rank())));
            }
            for &d in t.shape() {
                let got = r.u32("tensor shape")?;
                if got != d {
                    return Err(err("tensor shape", format!("expected {:?}", t.shape())));
                }
            }
            let raw = r.take(t.len() * 4, "tensor data")?;
            for (v, c) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            }
            Ok(())
        })();
        if let Err(e) = result {
            failure = Some(e);
        }
    };
    model.visit_params_mut(&mut |p| read_into(&mut p.value, &mut r));
    model.visit_buffers_mut(&mut |t| read_into(t, &mut r));
    if let Some(e) = failure {
        return Err(e.into());
    }
    if r.pos != bytes.len() {
        return Err(err("trailer", format!("{} unexpected trailing bytes", bytes.len() - r.pos)).into());
    }
    Ok(model)
}

pub fn save_checkpoint(model: &ThreeStreamModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_checkpoint(model))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ThreeStreamModel<f32>> {
    decode_checkpoint(&read_bytes(path.as_ref())?)
}
