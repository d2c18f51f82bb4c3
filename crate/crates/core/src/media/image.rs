use crate::tensor::Tensor;
use crate::{Error, Result};

/// 8-bit raster, 1 (gray) or 3 (RGB) interleaved channels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract(format!("image extent {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::contract(format!("image with {channels} channels")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::contract(format!(
                "{width}x{height}x{channels} image given {} bytes",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Values scaled to `[0, 1]`.
    pub fn to_unit_float(&self) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.pixels.iter().map(|&p| f32::from(p) / 255.0).collect(),
        }
    }
}

/// Real-valued raster with the same layout as [`Image`].
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 || data.len() != width * height * channels {
            return Err(Error::contract(format!(
                "float image {width}x{height}x{channels} with {} values",
                data.len()
            )));
        }
        Ok(FloatImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0 && channels > 0);
        FloatImage {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Single-channel plane from a closure over pixel coordinates.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        FloatImage {
            width,
            height,
            channels: 1,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels]
    }

    /// Border-replicated single-channel read.
    #[inline]
    pub fn clamped(&self, x: isize, y: isize) -> f32 {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.at(xi, yi)
    }

    /// ITU-R BT.601 luma; single-channel images are returned unchanged.
    pub fn to_gray(&self) -> FloatImage {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks(self.channels)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        FloatImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Rounds and clamps `[0, 1]` values to 8 bits.
    pub fn to_image(&self) -> Result<Image> {
        let pixels = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Image::new(self.width, self.height, self.channels, pixels)
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> FloatImage {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let i = (y * self.width + x) * self.channels;
                data.extend_from_slice(&self.data[i..i + self.channels]);
            }
        }
        FloatImage {
            data,
            ..self.clone()
        }
    }

    pub fn transpose(&self) -> FloatImage {
        let mut data = Vec::with_capacity(self.data.len());
        for x in 0..self.width {
            for y in 0..self.height {
                let i = (y * self.width + x) * self.channels;
                data.extend_from_slice(&self.data[i..i + self.channels]);
            }
        }
        FloatImage {
            width: self.height,
            height: self.width,
            channels: self.channels,
            data,
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[self.height, self.width, self.channels], self.data.clone()).expect("extents checked")
    }
}
