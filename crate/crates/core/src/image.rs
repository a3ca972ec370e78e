//! Dense images with channel-major storage and unit-interval pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An image stored channel-major (`C × H × W`), pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Builds an image from interleaved 8-bit RGB(A) or gray pixels (`H × W × C`).
    pub fn from_interleaved_u8(channels: usize, height: usize, width: usize, pixels: &[u8]) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} bytes for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        let mut data = vec![0.0; pixels.len()];
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data[(c * height + y) * width + x] = pixels[(y * width + x) * channels + c] as f32 / 255.0;
                }
            }
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds an image from channel-major 8-bit pixels, the CIFAR record layout.
    pub fn from_planar_u8(channels: usize, height: usize, width: usize, pixels: &[u8]) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} bytes for a {channels}x{height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data: pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let plane = self.height * self.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Bilinear resampling with half-pixel centers. Same-size resampling is exact.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        self.crop_resize(0, 0, self.height, self.width, height, width)
    }

    /// Resamples the region `[top, top+crop_h) × [left, left+crop_w)` to `height × width`.
    pub fn crop_resize(
        &self,
        top: usize,
        left: usize,
        crop_h: usize,
        crop_w: usize,
        height: usize,
        width: usize,
    ) -> Image {
        let mut out = Image::zeros(self.channels, height, width);
        let sy = crop_h as f32 / height as f32;
        let sx = crop_w as f32 / width as f32;
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (crop_h - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(crop_h - 1);
            let wy = fy - y0 as f32;
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (crop_w - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(crop_w - 1);
                let wx = fx - x0 as f32;
                for c in 0..self.channels {
                    let p = |yy: usize, xx: usize| self.get(c, top + yy, left + xx);
                    let top_row = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
                    let bottom_row = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
                    out.set(c, y, x, top_row * (1.0 - wy) + bottom_row * wy);
                }
            }
        }
        out
    }

    /// Interleaved 8-bit pixels (`H × W × C`), rounding to nearest.
    pub fn to_interleaved_u8(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out[(y * self.width + x) * self.channels + c] =
                        (self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        out
    }
}
