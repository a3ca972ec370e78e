//! Crop-resize, color jitter, horizontal flip and grayscale.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StandardParams {
    /// Fraction of the image area kept by the random crop.
    pub crop_scale: (f32, f32),
    /// Aspect-ratio range of the crop, sampled log-uniformly.
    pub crop_ratio: (f32, f32),
    pub jitter_probability: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub flip_probability: f32,
    pub grayscale_probability: f32,
}

impl Default for StandardParams {
    fn default() -> Self {
        Self {
            crop_scale: (0.2, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            jitter_probability: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            flip_probability: 0.5,
            grayscale_probability: 0.2,
        }
    }
}

impl StandardParams {
    /// Every stochastic transform disabled: the output equals the input.
    pub fn identity() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            jitter_probability: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            flip_probability: 0.0,
            grayscale_probability: 0.0,
        }
    }
}

fn uniform(rng: &mut Rng, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Applies, in order: random resized crop, color jitter, flip, grayscale.
pub fn standard_augment(image: &Image, rng: &mut Rng, params: &StandardParams) -> Image {
    let mut out = random_resized_crop(image, rng, params);
    if params.jitter_probability > 0.0 && rng.random::<f32>() < params.jitter_probability {
        color_jitter(&mut out, rng, params);
    }
    if params.flip_probability > 0.0 && rng.random::<f32>() < params.flip_probability {
        flip_horizontal(&mut out);
    }
    if params.grayscale_probability > 0.0 && rng.random::<f32>() < params.grayscale_probability {
        grayscale(&mut out);
    }
    out.clamp_unit();
    out
}

fn random_resized_crop(image: &Image, rng: &mut Rng, params: &StandardParams) -> Image {
    let (_, h, w) = image.shape();
    let area = (h * w) as f32;
    let (log_lo, log_hi) = (params.crop_ratio.0.ln(), params.crop_ratio.1.ln());
    let mut region = None;
    for _ in 0..10 {
        let target = area * uniform(rng, params.crop_scale.0, params.crop_scale.1);
        let ratio = uniform(rng, log_lo, log_hi).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            region = Some((top, left, ch, cw));
            break;
        }
    }
    // Fallback: the largest centered crop within the ratio bounds.
    let (top, left, ch, cw) = region.unwrap_or_else(|| {
        let in_ratio = w as f32 / h as f32;
        let (cw, ch) = if in_ratio < params.crop_ratio.0 {
            (w, ((w as f32 / params.crop_ratio.0).round() as usize).clamp(1, h))
        } else if in_ratio > params.crop_ratio.1 {
            (((h as f32 * params.crop_ratio.1).round() as usize).clamp(1, w), h)
        } else {
            (w, h)
        };
        ((h - ch) / 2, (w - cw) / 2, ch, cw)
    });
    if (top, left, ch, cw) == (0, 0, h, w) {
        return image.clone();
    }
    image.crop_resize(top, left, ch, cw, h, w)
}

fn luminance(image: &Image, y: usize, x: usize) -> f32 {
    0.299 * image.get(0, y, x) + 0.587 * image.get(1, y, x) + 0.114 * image.get(2, y, x)
}

fn blend(image: &mut Image, other: impl Fn(usize, usize, usize) -> f32, factor: f32) {
    let (c, h, w) = image.shape();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = factor * image.get(ch, y, x) + (1.0 - factor) * other(ch, y, x);
                image.set(ch, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
}

fn color_jitter(image: &mut Image, rng: &mut Rng, params: &StandardParams) {
    let mut order = [0usize, 1, 2, 3];
    order.shuffle(rng);
    for op in order {
        match op {
            0 if params.brightness > 0.0 => {
                let f = uniform(rng, (1.0 - params.brightness).max(0.0), 1.0 + params.brightness);
                blend(image, |_, _, _| 0.0, f);
            }
            1 if params.contrast > 0.0 => {
                let f = uniform(rng, (1.0 - params.contrast).max(0.0), 1.0 + params.contrast);
                let mean = if image.channels() == 3 {
                    let (_, h, w) = image.shape();
                    let mut s = 0.0;
                    for y in 0..h {
                        for x in 0..w {
                            s += luminance(image, y, x);
                        }
                    }
                    s / (h * w) as f32
                } else {
                    image.data().iter().sum::<f32>() / image.data().len() as f32
                };
                blend(image, |_, _, _| mean, f);
            }
            2 if params.saturation > 0.0 && image.channels() == 3 => {
                let f = uniform(rng, (1.0 - params.saturation).max(0.0), 1.0 + params.saturation);
                let gray = image.clone();
                blend(image, |_, y, x| luminance(&gray, y, x), f);
            }
            3 if params.hue > 0.0 && image.channels() == 3 => {
                let shift = uniform(rng, -params.hue, params.hue);
                shift_hue(image, shift);
            }
            _ => {}
        }
    }
}

fn shift_hue(image: &mut Image, shift: f32) {
    let (_, h, w) = image.shape();
    for y in 0..h {
        for x in 0..w {
            let (hh, s, v) = rgb_to_hsv(image.get(0, y, x), image.get(1, y, x), image.get(2, y, x));
            let (r, g, b) = hsv_to_rgb((hh + shift).rem_euclid(1.0), s, v);
            image.set(0, y, x, r);
            image.set(1, y, x, g);
            image.set(2, y, x, b);
        }
    }
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let sector = h * 6.0;
    let i = sector.floor();
    let f = sector - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

pub fn flip_horizontal(image: &mut Image) {
    let (c, h, w) = image.shape();
    for ch in 0..c {
        for y in 0..h {
            let row = &mut image.channel_mut(ch)[y * w..(y + 1) * w];
            row.reverse();
        }
    }
}

/// Replaces every channel with the luminance (single-channel images are left as is).
pub fn grayscale(image: &mut Image) {
    if image.channels() != 3 {
        return;
    }
    let (_, h, w) = image.shape();
    for y in 0..h {
        for x in 0..w {
            let l = luminance(image, y, x);
            for c in 0..3 {
                image.set(c, y, x, l);
            }
        }
    }
}
