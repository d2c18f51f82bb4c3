//! Readers and writers for frames (binary PPM/PGM), clip directories, and
//! Middlebury `.flo` flow fields. Every writer is the exact inverse of its
//! reader on canonical files.

mod clip;
mod flo;
mod image;
mod pnm;

pub use clip::{read_clip, read_clip_meta, write_clip, ClipFrames, ClipMeta, META_FILE};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FlowField, FLO_TAG};
pub use image::{FloatImage, Image};
pub use pnm::{decode_pnm, encode_pnm, read_ppm, write_ppm};

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::io(path))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::io(path))
}
