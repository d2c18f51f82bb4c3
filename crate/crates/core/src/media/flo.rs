//! Middlebury `.flo`: the float tag 202021.25, width and height as 32-bit
//! integers, then row-major interleaved `(u, v)` floats; all little-endian.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{FileKind, FormatError};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const FLO_TAG: f32 = 202_021.25;

/// Dense displacement field in pixels per frame; `u` points right, `v` down.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    /// Interleaved `(u, v)` per pixel.
    data: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        FlowField {
            width,
            height,
            data: vec![0.0; width * height * 2],
        }
    }

    pub fn from_interleaved(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 2 {
            return Err(Error::contract(format!(
                "flow {width}x{height} with {} values",
                data.len()
            )));
        }
        Ok(FlowField { width, height, data })
    }

    /// Builds a field from separate `u` and `v` planes.
    pub fn from_planes(width: usize, height: usize, u: &[f32], v: &[f32]) -> Result<Self> {
        if u.len() != width * height || v.len() != u.len() {
            return Err(Error::contract("flow planes do not match extent"));
        }
        let data = u.iter().zip(v).flat_map(|(&a, &b)| [a, b]).collect();
        Self::from_interleaved(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn u(&self, x: usize, y: usize) -> f32 {
        self.data[(y * self.width + x) * 2]
    }

    pub fn v(&self, x: usize, y: usize) -> f32 {
        self.data[(y * self.width + x) * 2 + 1]
    }

    pub fn mean(&self) -> (f64, f64) {
        let n = (self.width * self.height) as f64;
        let (su, sv) = self
            .data
            .chunks(2)
            .fold((0.0, 0.0), |(a, b), p| (a + f64::from(p[0]), b + f64::from(p[1])));
        (su / n, sv / n)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean Euclidean distance to `other` (endpoint error).
    pub fn endpoint_error(&self, other: &FlowField) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let total: f64 = self
            .data
            .chunks(2)
            .zip(other.data.chunks(2))
            .map(|(a, b)| f64::from(a[0] - b[0]).hypot(f64::from(a[1] - b[1])))
            .sum();
        total / (self.width * self.height) as f64
    }

    /// `[H, W, 2]` tensor of raw displacements.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[self.height, self.width, 2], self.data.clone()).expect("extents checked")
    }
}

fn err(field: &str, message: impl Into<String>) -> FormatError {
    FormatError::new(FileKind::Flo, field, message)
}

pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    if !flow.is_finite() {
        return Err(Error::contract("flow contains non-finite values"));
    }
    let mut out = Vec::with_capacity(12 + flow.data.len() * 4);
    out.extend_from_slice(&FLO_TAG.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for v in &flow.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, FormatError> {
    let word = |i: usize| -> Option<[u8; 4]> { bytes.get(i * 4..i * 4 + 4).map(|s| s.try_into().expect("4 bytes")) };
    let tag = word(0).ok_or_else(|| err("tag", "not a flow file (shorter than tag)"))?;
    if tag != FLO_TAG.to_le_bytes() {
        return Err(err("tag", "not a flow file"));
    }
    let width = i32::from_le_bytes(word(1).ok_or_else(|| err("width", "truncated header"))?);
    let height = i32::from_le_bytes(word(2).ok_or_else(|| err("height", "truncated header"))?);
    if width < 1 {
        return Err(err("width", format!("invalid width {width}")));
    }
    if height < 1 {
        return Err(err("height", format!("invalid height {height}")));
    }
    let (w, h) = (width as usize, height as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| err("payload", "dimensions overflow"))?;
    let payload = &bytes[12..];
    if payload.len() != expected {
        return Err(err(
            "payload",
            format!(
                "truncated or oversized: header implies {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(FlowField {
        width: w,
        height: h,
        data,
    })
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_flo(flow)?)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    Ok(decode_flo(&read_bytes(path.as_ref())?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_pixel_zero_flow_layout() {
        let bytes = encode_flo(&FlowField::zeros(1, 1)).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(&bytes[4..12], &[1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[12..], &[0; 8]);
    }

    #[test]
    fn zero_tag_is_rejected() {
        let mut bytes = encode_flo(&FlowField::zeros(1, 1)).unwrap();
        bytes[..4].copy_from_slice(&0.0f32.to_le_bytes());
        let e = decode_flo(&bytes).unwrap_err();
        assert_eq!(e.field, "tag");
        assert!(e.message.contains("not a flow file"));
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = encode_flo(&FlowField::zeros(2, 2)).unwrap();
        assert_eq!(decode_flo(&bytes[..bytes.len() - 1]).unwrap_err().field, "payload");
    }

    #[test]
    fn non_finite_flow_is_not_written() {
        let f = FlowField::from_interleaved(1, 1, vec![f32::NAN, 0.0]).unwrap();
        assert!(encode_flo(&f).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(w in 1usize..5, h in 1usize..5, vals in proptest::collection::vec(-1e6f32..1e6, 32)) {
            let data: Vec<f32> = (0..w * h * 2).map(|i| vals[i % vals.len()]).collect();
            let f = FlowField::from_interleaved(w, h, data).unwrap();
            let bytes = encode_flo(&f).unwrap();
            let back = decode_flo(&bytes).unwrap();
            prop_assert_eq!(encode_flo(&back).unwrap(), bytes);
            let same = back.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
