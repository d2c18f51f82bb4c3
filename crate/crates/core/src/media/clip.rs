//! A clip is a directory holding `clip.meta` and `frame_000000.ppm`,
//! `frame_000001.ppm`, ... contiguous from zero.

use std::fs;
use std::path::{Path, PathBuf};

use super::{decode_pnm, encode_pnm, read_bytes, write_bytes, Image};
use crate::error::{FileKind, FormatError};
use crate::{Error, Result};

pub const META_FILE: &str = "clip.meta";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipMeta {
    pub fps: u32,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
}

impl ClipMeta {
    pub fn duration_secs(&self) -> f64 {
        self.frame_count as f64 / f64::from(self.fps)
    }

    /// `fps`, `width`, `height`, `frame_count`, one `key=value` per LF-terminated line.
    pub fn encode(&self) -> String {
        format!(
            "fps={}\nwidth={}\nheight={}\nframe_count={}\n",
            self.fps, self.width, self.height, self.frame_count
        )
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let err = |field: &str, msg: String| FormatError::new(FileKind::ClipMeta, field, msg);
        let text = std::str::from_utf8(bytes)
            .ok()
            .filter(|t| t.is_ascii())
            .ok_or_else(|| err("encoding", "not ASCII".into()))?;
        if !text.ends_with('\n') {
            return Err(err("encoding", "last line must end with LF".into()));
        }
        let mut fields: [Option<usize>; 4] = [None; 4];
        const KEYS: [&str; 4] = ["fps", "width", "height", "frame_count"];
        for line in text.lines() {
            if line.contains('\r') {
                return Err(err("encoding", "CR in line ending".into()));
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("line", format!("expected key=value, got {line:?}")))?;
            let slot = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| err(key, "unknown key".into()))?;
            if fields[slot].is_some() {
                return Err(err(key, "duplicate key".into()));
            }
            let parsed: usize = value
                .parse()
                .ok()
                .filter(|v| *v >= 1 && value.len() <= 9 && !value.starts_with('+'))
                .ok_or_else(|| err(key, format!("expected a positive integer, got {value:?}")))?;
            fields[slot] = Some(parsed);
        }
        let get = |i: usize| fields[i].ok_or_else(|| err(KEYS[i], "missing key".into()));
        let meta = ClipMeta {
            fps: get(0)? as u32,
            width: get(1)?,
            height: get(2)?,
            frame_count: get(3)?,
        };
        // Reject non-canonical spellings (leading zeros, reordering) so round trips are exact.
        if meta.encode().as_bytes() != bytes {
            return Err(err("layout", "keys must appear once each, in canonical order and form".into()));
        }
        Ok(meta)
    }
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:06}.ppm"))
}

pub fn read_clip_meta(dir: impl AsRef<Path>) -> Result<ClipMeta> {
    let bytes = read_bytes(&dir.as_ref().join(META_FILE))?;
    Ok(ClipMeta::decode(&bytes)?)
}

/// Validates the meta file and the presence of every frame, then returns a
/// lazy iterator over the decoded frames in index order.
pub fn read_clip(dir: impl AsRef<Path>) -> Result<(ClipMeta, ClipFrames)> {
    let dir = dir.as_ref().to_path_buf();
    let meta = read_clip_meta(&dir)?;
    for index in 0..meta.frame_count {
        if !frame_path(&dir, index).is_file() {
            return Err(FormatError::new(FileKind::Clip, "frames", format!("gap at index {index}")).into());
        }
    }
    if frame_path(&dir, meta.frame_count).exists() {
        return Err(FormatError::new(
            FileKind::Clip,
            "frames",
            format!("frame {} present beyond frame_count", meta.frame_count),
        )
        .into());
    }
    Ok((meta, ClipFrames { dir, meta, next: 0 }))
}

pub struct ClipFrames {
    dir: PathBuf,
    meta: ClipMeta,
    next: usize,
}

impl ClipFrames {
    pub fn frame(&self, index: usize) -> Result<Image> {
        let path = frame_path(&self.dir, index);
        let img = decode_pnm(&read_bytes(&path)?)?;
        if (img.width(), img.height()) != (self.meta.width, self.meta.height) {
            return Err(FormatError::new(
                FileKind::Clip,
                path.file_name().and_then(|n| n.to_str()).unwrap_or("frame"),
                format!(
                    "dimensions {}x{} do not match meta {}x{}",
                    img.width(),
                    img.height(),
                    self.meta.width,
                    self.meta.height
                ),
            )
            .into());
        }
        Ok(img)
    }

    pub fn meta(&self) -> &ClipMeta {
        &self.meta
    }
}

impl Iterator for ClipFrames {
    type Item = Result<Image>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.meta.frame_count {
            return None;
        }
        let item = self.frame(self.next);
        self.next += 1;
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.meta.frame_count - self.next;
        (left, Some(left))
    }
}

/// Writes `frames` as a clip directory (created if needed).
pub fn write_clip(dir: impl AsRef<Path>, fps: u32, frames: &[Image]) -> Result<ClipMeta> {
    let dir = dir.as_ref();
    let first = frames
        .first()
        .ok_or_else(|| Error::contract("clip needs at least one frame"))?;
    if fps == 0 {
        return Err(Error::contract("clip fps must be positive"));
    }
    if frames
        .iter()
        .any(|f| (f.width(), f.height()) != (first.width(), first.height()))
    {
        return Err(Error::contract("clip frames differ in size"));
    }
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let meta = ClipMeta {
        fps,
        width: first.width(),
        height: first.height(),
        frame_count: frames.len(),
    };
    for (i, frame) in frames.iter().enumerate() {
        write_bytes(&frame_path(dir, i), &encode_pnm(frame))?;
    }
    write_bytes(&dir.join(META_FILE), meta.encode().as_bytes())?;
    Ok(meta)
}
