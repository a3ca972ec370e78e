//! Domain-aware style views: adaptive-instance-normalization style transfer with a
//! pretrained encoder/decoder, or a channel-statistics transfer when no model is available.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{stream_rng, Stream};
use crate::tensorfile::{self, NamedTensor};

const ADAIN_EPS: f64 = 1e-5;
const STATS_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StyleLayer {
    /// Reflection-padded convolution, stride 1.
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    MaxPool,
    Upsample,
}

/// Layer plan and preprocessing constants stored in the weights header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylePlan {
    pub encoder: Vec<StyleLayer>,
    pub decoder: Vec<StyleLayer>,
    pub input_size: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

fn conv(name: &str, i: usize, o: usize, k: usize) -> StyleLayer {
    StyleLayer::Conv {
        name: name.into(),
        in_channels: i,
        out_channels: o,
        kernel: k,
    }
}

impl StylePlan {
    /// VGG-19 through relu4_1 with the mirrored decoder used for arbitrary style transfer.
    pub fn vgg_adain(input_size: usize) -> Self {
        use StyleLayer::{MaxPool, Relu, Upsample};
        let encoder = vec![
            conv("enc.0", 3, 3, 1),
            conv("enc.1_1", 3, 64, 3),
            Relu,
            conv("enc.1_2", 64, 64, 3),
            Relu,
            MaxPool,
            conv("enc.2_1", 64, 128, 3),
            Relu,
            conv("enc.2_2", 128, 128, 3),
            Relu,
            MaxPool,
            conv("enc.3_1", 128, 256, 3),
            Relu,
            conv("enc.3_2", 256, 256, 3),
            Relu,
            conv("enc.3_3", 256, 256, 3),
            Relu,
            conv("enc.3_4", 256, 256, 3),
            Relu,
            MaxPool,
            conv("enc.4_1", 256, 512, 3),
            Relu,
        ];
        let decoder = vec![
            conv("dec.4_1", 512, 256, 3),
            Relu,
            Upsample,
            conv("dec.3_4", 256, 256, 3),
            Relu,
            conv("dec.3_3", 256, 256, 3),
            Relu,
            conv("dec.3_2", 256, 256, 3),
            Relu,
            conv("dec.3_1", 256, 128, 3),
            Relu,
            Upsample,
            conv("dec.2_2", 128, 128, 3),
            Relu,
            conv("dec.2_1", 128, 64, 3),
            Relu,
            Upsample,
            conv("dec.1_2", 64, 64, 3),
            Relu,
            conv("dec.1_1", 64, 3, 3),
        ];
        Self {
            encoder,
            decoder,
            input_size,
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// A small encoder/decoder with the same structure, for tests and smoke runs.
    pub fn tiny(input_size: usize) -> Self {
        use StyleLayer::{MaxPool, Relu, Upsample};
        Self {
            encoder: vec![conv("enc.1", 3, 8, 3), Relu, MaxPool, conv("enc.2", 8, 16, 3), Relu],
            decoder: vec![conv("dec.2", 16, 8, 3), Relu, Upsample, conv("dec.1", 8, 3, 3)],
            input_size,
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    fn convs(&self) -> impl Iterator<Item = (&str, usize, usize, usize)> {
        self.encoder.iter().chain(&self.decoder).filter_map(|l| match l {
            StyleLayer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
            } => Some((name.as_str(), *in_channels, *out_channels, *kernel)),
            _ => None,
        })
    }
}

/// Pretrained style-transfer network. Immutable once loaded.
#[derive(Clone, Debug)]
pub struct StyleModel {
    plan: StylePlan,
    weights: HashMap<String, (Tensor, Tensor)>,
}

impl StyleModel {
    /// Randomly initialized weights; useful only for exercising the pipeline.
    pub fn random(plan: StylePlan, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::ModelInit);
        let mut weights = HashMap::new();
        for (name, i, o, k) in plan.convs() {
            let fan_in = (i * k * k) as f32;
            let bound = (6.0 / fan_in).sqrt();
            let w: Vec<f32> = (0..o * i * k * k).map(|_| rng.random_range(-bound..bound)).collect();
            weights.insert(
                name.to_string(),
                (
                    Tensor::from_vec(w, (o, i, k, k), &Device::Cpu)?,
                    Tensor::zeros(o, DType::F32, &Device::Cpu)?,
                ),
            );
        }
        Ok(Self { plan, weights })
    }

    pub fn plan(&self) -> &StylePlan {
        &self.plan
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        for (name, ..) in self.plan.convs() {
            let (w, b) = &self.weights[name];
            tensors.push(NamedTensor::f32(
                format!("{name}.weight"),
                w.dims().to_vec(),
                w.flatten_all()?.to_vec1()?,
            ));
            tensors.push(NamedTensor::f32(
                format!("{name}.bias"),
                b.dims().to_vec(),
                b.to_vec1()?,
            ));
        }
        let mut metadata = HashMap::new();
        metadata.insert("plan".into(), serde_json::to_string(&self.plan)?);
        tensorfile::encode("style-model", &tensors, metadata)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut decoded = tensorfile::decode("style-model", bytes).map_err(|e| Error::StyleModel(e.to_string()))?;
        let plan: StylePlan = serde_json::from_str(decoded.meta("plan")?)?;
        let mut weights = HashMap::new();
        for (name, i, o, k) in plan.convs() {
            let (ws, w) = decoded.take_f32(&format!("{name}.weight"))?;
            let (bs, b) = decoded.take_f32(&format!("{name}.bias"))?;
            if ws != [o, i, k, k] || bs != [o] {
                return Err(Error::StyleModel(format!(
                    "tensor shapes for {name} do not match the layer plan"
                )));
            }
            weights.insert(
                name.to_string(),
                (
                    Tensor::from_vec(w, (o, i, k, k), &Device::Cpu)?,
                    Tensor::from_vec(b, o, &Device::Cpu)?,
                ),
            );
        }
        Ok(Self { plan, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        tensorfile::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::StyleModel(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    fn run(&self, layers: &[StyleLayer], mut x: Tensor) -> Result<Tensor> {
        for layer in layers {
            x = match layer {
                StyleLayer::Conv { name, kernel, .. } => {
                    let (w, b) = &self.weights[name];
                    let padded = reflect_pad(&x, kernel / 2)?;
                    padded.conv2d(w, 0, 1, 1, 1)?.broadcast_add(&b.reshape((1, (), 1, 1))?)?
                }
                StyleLayer::Relu => x.relu()?,
                StyleLayer::MaxPool => x.max_pool2d(2)?,
                StyleLayer::Upsample => {
                    let (_, _, h, w) = x.dims4()?;
                    x.upsample_nearest2d(h * 2, w * 2)?
                }
            };
        }
        Ok(x)
    }

    fn to_input(&self, image: &Image) -> Result<Tensor> {
        let s = self.plan.input_size;
        let resized = image.resize_bilinear(s, s);
        let mut data = resized.into_data();
        let plane = s * s;
        for c in 0..3 {
            for v in &mut data[c * plane..(c + 1) * plane] {
                *v = (*v - self.plan.mean[c]) / self.plan.std[c];
            }
        }
        Ok(Tensor::from_vec(data, (1, 3, s, s), &Device::Cpu)?)
    }

    /// Content from `content`, style statistics from `style`; output has the input's shape.
    pub fn stylize(&self, content: &Image, style: &Image) -> Result<Image> {
        if content.channels() != 3 || style.channels() != 3 {
            return Err(Error::StyleModel("style transfer needs RGB images".into()));
        }
        let fc = self.run(&self.plan.encoder, self.to_input(content)?)?;
        let fs = self.run(&self.plan.encoder, self.to_input(style)?)?;
        let mixed = adain(&fc, &fs)?;
        let decoded = self.run(&self.plan.decoder, mixed)?;
        let (_, c, h, w) = decoded.dims4()?;
        if c != 3 {
            return Err(Error::StyleModel(format!("decoder produced {c} channels")));
        }
        let mut data: Vec<f32> = decoded.flatten_all()?.to_vec1()?;
        let plane = h * w;
        for ch in 0..3 {
            for v in &mut data[ch * plane..(ch + 1) * plane] {
                *v = *v * self.plan.std[ch] + self.plan.mean[ch];
            }
        }
        let mut out = Image::new(3, h, w, data)?.resize_bilinear(content.height(), content.width());
        out.clamp_unit();
        Ok(out)
    }
}

fn reflect_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let mut x = x.clone();
    for dim in [2usize, 3] {
        let n = x.dim(dim)?;
        let mut parts = Vec::with_capacity(2 * pad + 1);
        for k in (1..=pad).rev() {
            parts.push(x.narrow(dim, k.min(n - 1), 1)?);
        }
        parts.push(x.clone());
        for k in 1..=pad {
            parts.push(x.narrow(dim, n.saturating_sub(1 + k), 1)?);
        }
        x = Tensor::cat(&parts, dim)?;
    }
    Ok(x)
}

/// Re-scales each content channel to the style channel's mean and standard deviation.
fn adain(content: &Tensor, style: &Tensor) -> Result<Tensor> {
    let stats = |t: &Tensor| -> Result<(Tensor, Tensor)> {
        let flat = t.flatten_from(2)?;
        let mean = flat.mean_keepdim(D::Minus1)?;
        let var = flat.broadcast_sub(&mean)?.sqr()?.mean_keepdim(D::Minus1)?;
        Ok((mean.unsqueeze(3)?, (var + ADAIN_EPS)?.sqrt()?.unsqueeze(3)?))
    };
    let (mc, sc) = stats(content)?;
    let (ms, ss) = stats(style)?;
    Ok(content
        .broadcast_sub(&mc)?
        .broadcast_div(&sc)?
        .broadcast_mul(&ss)?
        .broadcast_add(&ms)?)
}

/// Per-channel moment matching: `σ_d · (x_i − μ_i)/σ_i + μ_d`, clipped to `[0,1]`.
pub fn channel_stats_transfer(x_i: &Image, x_d: &Image) -> Result<Image> {
    if x_i.channels() != x_d.channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} channels",
            x_i.channels(),
            x_d.channels()
        )));
    }
    let mut out = x_i.clone();
    for c in 0..x_i.channels() {
        let (mu_i, sd_i) = moments(x_i.channel(c));
        let (mu_d, sd_d) = moments(x_d.channel(c));
        for v in out.channel_mut(c) {
            let z = if sd_i > STATS_EPS { (*v as f64 - mu_i) / sd_i } else { 0.0 };
            *v = (sd_d * z + mu_d).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// Mean and population standard deviation, accumulated in f64.
pub fn moments(values: &[f32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// How style views are produced.
#[derive(Clone, Debug)]
pub enum Styler {
    Model(Box<StyleModel>),
    ChannelStats,
}

impl Styler {
    pub fn is_fallback(&self) -> bool {
        matches!(self, Styler::ChannelStats)
    }
}

/// Style view of `x_i` taking its style from `x_d`.
pub fn das(x_i: &Image, x_d: &Image, styler: &Styler) -> Result<Image> {
    match styler {
        Styler::Model(model) => model.stylize(x_i, x_d),
        Styler::ChannelStats => channel_stats_transfer(x_i, x_d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_image(rng: &mut Rng, lo: f32, hi: f32, side: usize) -> Image {
        Image::new(3, side, side, (0..3 * side * side).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn fallback_matches_donor_moments() {
        let mut rng = stream_rng(0, Stream::Augmentation);
        let x_i = random_image(&mut rng, 0.0, 1.0, 16);
        let x_d = random_image(&mut rng, 0.35, 0.65, 16);
        let out = das(&x_i, &x_d, &Styler::ChannelStats).unwrap();
        for c in 0..3 {
            let (m_out, s_out) = moments(out.channel(c));
            let (m_d, s_d) = moments(x_d.channel(c));
            assert!((m_out - m_d).abs() < 1e-5);
            assert!((s_out - s_d).abs() < 1e-5);
        }
    }

    #[test]
    fn fallback_constant_content_is_finite() {
        let x_i = Image::filled(3, 4, 4, 0.3);
        let x_d = Image::filled(3, 4, 4, 0.8);
        let out = channel_stats_transfer(&x_i, &x_d).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.8).abs() < 1e-6));
    }

    #[test]
    fn model_output_shape_range_and_determinism() {
        let model = StyleModel::random(StylePlan::tiny(16), 3).unwrap();
        let mut rng = stream_rng(1, Stream::Augmentation);
        let x = random_image(&mut rng, 0.0, 1.0, 12);
        let d = random_image(&mut rng, 0.0, 1.0, 12);
        let a = das(&x, &x, &Styler::Model(Box::new(model.clone()))).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert!(a.in_unit_range());
        let b1 = model.stylize(&x, &d).unwrap();
        let b2 = model.stylize(&x, &d).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn weights_file_round_trips() {
        let model = StyleModel::random(StylePlan::tiny(8), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("style.safetensors");
        model.save(&path).unwrap();
        let back = StyleModel::load(&path).unwrap();
        assert_eq!(back.plan(), model.plan());
        let mut rng = stream_rng(2, Stream::Augmentation);
        let x = random_image(&mut rng, 0.0, 1.0, 8);
        let d = random_image(&mut rng, 0.0, 1.0, 8);
        assert_eq!(back.stylize(&x, &d).unwrap(), model.stylize(&x, &d).unwrap());
    }

    #[test]
    fn corrupt_or_missing_weights_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(StyleModel::load(&dir.path().join("absent.safetensors")).is_err());
        let path = dir.path().join("junk.safetensors");
        std::fs::write(&path, b"not a weights file").unwrap();
        assert!(matches!(StyleModel::load(&path), Err(Error::StyleModel(_))));
    }

    #[test]
    fn reflect_pad_mirrors_edges() {
        let t = Tensor::from_vec(vec![1f32, 2., 3.], (1, 1, 1, 3), &Device::Cpu).unwrap();
        let p = reflect_pad(&t.repeat((1, 1, 3, 1)).unwrap(), 1).unwrap();
        let row: Vec<f32> = p.get(0).unwrap().get(0).unwrap().get(0).unwrap().to_vec1().unwrap();
        assert_eq!(row, vec![2., 1., 2., 3., 2.]);
    }

    #[test]
    fn vgg_plan_is_consistent() {
        let plan = StylePlan::vgg_adain(64);
        let enc_out = plan.encoder.iter().rev().find_map(|l| match l {
            StyleLayer::Conv { out_channels, .. } => Some(*out_channels),
            _ => None,
        });
        let dec_in = plan.decoder.iter().find_map(|l| match l {
            StyleLayer::Conv { in_channels, .. } => Some(*in_channels),
            _ => None,
        });
        assert_eq!(enc_out, Some(512));
        assert_eq!(dec_in, Some(512));
    }
}
