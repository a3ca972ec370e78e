//! Domain-aware mixup and cutmix: views of `x_i` that borrow from a stream image `x_d`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;
use crate::rng::Rng;

pub const LAMBDA_LOW: f64 = 0.5;
pub const LAMBDA_HIGH: f64 = 1.0;

/// `λ ~ U[0.5, 1)`: the input image always carries at least half of the view.
pub fn sample_lambda(rng: &mut Rng) -> f64 {
    sample_lambda_in(rng, LAMBDA_LOW, LAMBDA_HIGH)
}

pub fn sample_lambda_in(rng: &mut Rng, low: f64, high: f64) -> f64 {
    if high > low {
        rng.random_range(low..high)
    } else {
        low
    }
}

/// `x_a = λ·x_i + (1−λ)·x_d`, pixel-wise.
pub fn dam(x_i: &Image, x_d: &Image, lambda: f64) -> Result<Image> {
    x_i.ensure_same_shape(x_d)?;
    let l = lambda as f32;
    let data = x_i
        .data()
        .iter()
        .zip(x_d.data())
        .map(|(&a, &b)| (l * a + (1.0 - l) * b).clamp(0.0, 1.0))
        .collect();
    let (c, h, w) = x_i.shape();
    Image::new(c, h, w, data)
}

/// Cut region: top-left corner and unclipped size, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub r_x: f64,
    pub r_y: f64,
    pub r_w: f64,
    pub r_h: f64,
    pub width: usize,
    pub height: usize,
}

impl BoundingBox {
    /// `(x0, y0, x1, y1)` after clipping to `[0,W]×[0,H]`.
    pub fn clipped(&self) -> (f64, f64, f64, f64) {
        let x0 = self.r_x.clamp(0.0, self.width as f64);
        let y0 = self.r_y.clamp(0.0, self.height as f64);
        let x1 = (self.r_x + self.r_w).clamp(0.0, self.width as f64);
        let y1 = (self.r_y + self.r_h).clamp(0.0, self.height as f64);
        (x0, y0, x1, y1)
    }

    pub fn clipped_area(&self) -> f64 {
        let (x0, y0, x1, y1) = self.clipped();
        (x1 - x0) * (y1 - y0)
    }

    /// Pixel columns and rows whose unit squares lie entirely inside the clipped box.
    pub fn pixel_region(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (x0, y0, x1, y1) = self.clipped();
        let cols = x0.ceil() as usize..(x1.floor() as usize).max(x0.ceil() as usize);
        let rows = y0.ceil() as usize..(y1.floor() as usize).max(y0.ceil() as usize);
        (cols, rows)
    }
}

/// `r_x ~ U(0,W)`, `r_y ~ U(0,H)`, `r_w = W·√(1−λ)`, `r_h = H·√(1−λ)`.
pub fn sample_bbox(width: usize, height: usize, lambda: f64, rng: &mut Rng) -> BoundingBox {
    let r_x = rng.random::<f64>() * width as f64;
    let r_y = rng.random::<f64>() * height as f64;
    let side = (1.0 - lambda).max(0.0).sqrt();
    BoundingBox {
        r_x,
        r_y,
        r_w: width as f64 * side,
        r_h: height as f64 * side,
        width,
        height,
    }
}

/// Cutmix view of `x_i`: the sampled box is filled from `x_d`, the rest kept from `x_i`.
pub fn dac(x_i: &Image, x_d: &Image, lambda: f64, rng: &mut Rng) -> Result<Image> {
    x_i.ensure_same_shape(x_d)?;
    let bbox = sample_bbox(x_i.width(), x_i.height(), lambda, rng);
    dac_with_box(x_i, x_d, &bbox)
}

pub fn dac_with_box(x_i: &Image, x_d: &Image, bbox: &BoundingBox) -> Result<Image> {
    x_i.ensure_same_shape(x_d)?;
    let mut out = x_i.clone();
    let (cols, rows) = bbox.pixel_region();
    for c in 0..x_i.channels() {
        for y in rows.clone() {
            for x in cols.clone() {
                out.set(c, y, x, x_d.get(c, y, x));
            }
        }
    }
    Ok(out)
}
