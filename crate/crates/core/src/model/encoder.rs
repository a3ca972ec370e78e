use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm2d, Conv2d, Linear, Mode, ParamBuilder};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{stream_rng, Stream};
use crate::tensorfile::{self, NamedTensor};

pub const PROJECTION_HIDDEN: usize = 512;
pub const PROJECTION_DIM: usize = 128;
const NORM_FLOOR: f64 = 1e-12;
const INFERENCE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// CIFAR-style ResNet-18: 3×3 stem, no stem pooling, 512-d features.
    Resnet18,
    /// Four conv-BN-ReLU-pool blocks (32/64/128/256 channels), 256-d features.
    DeskCnn,
}

impl Architecture {
    pub fn representation_dim(self) -> usize {
        match self {
            Architecture::Resnet18 => 512,
            Architecture::DeskCnn => 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub architecture: Architecture,
    pub input_channels: usize,
    pub representation_dim: usize,
    pub projection_hidden: usize,
    pub projection_dim: usize,
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    fn new(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: b.conv(&format!("{name}.conv"), cin, cout, k, stride)?,
            bn: b.batch_norm(&format!("{name}.bn"), cout)?,
        })
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?, mode)
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    first: ConvBn,
    second: ConvBn,
    shortcut: Option<ConvBn>,
}

impl BasicBlock {
    fn new(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        let shortcut = if stride != 1 || cin != cout {
            Some(ConvBn::new(b, &format!("{name}.shortcut"), cin, cout, 1, stride)?)
        } else {
            None
        };
        Ok(Self {
            first: ConvBn::new(b, &format!("{name}.0"), cin, cout, 3, stride)?,
            second: ConvBn::new(b, &format!("{name}.1"), cout, cout, 3, 1)?,
            shortcut,
        })
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.first.forward(x, mode)?.relu()?;
        let y = self.second.forward(&y, mode)?;
        let skip = match &mut self.shortcut {
            Some(s) => s.forward(x, mode)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }

    fn batch_norms(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut out = vec![&mut self.first.bn, &mut self.second.bn];
        if let Some(s) = &mut self.shortcut {
            out.push(&mut s.bn);
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Backbone {
    Desk(Vec<ConvBn>),
    Resnet { stem: ConvBn, blocks: Vec<BasicBlock> },
}

impl Backbone {
    fn build(arch: Architecture, channels: usize, b: &mut ParamBuilder) -> Result<Self> {
        Ok(match arch {
            Architecture::DeskCnn => {
                let widths = [channels, 32, 64, 128, 256];
                let blocks = (0..4)
                    .map(|i| ConvBn::new(b, &format!("features.{i}"), widths[i], widths[i + 1], 3, 1))
                    .collect::<Result<_>>()?;
                Backbone::Desk(blocks)
            }
            Architecture::Resnet18 => {
                let stem = ConvBn::new(b, "stem", channels, 64, 3, 1)?;
                let mut blocks = Vec::new();
                let mut cin = 64;
                for (stage, &cout) in [64usize, 128, 256, 512].iter().enumerate() {
                    for k in 0..2 {
                        let stride = if stage > 0 && k == 0 { 2 } else { 1 };
                        blocks.push(BasicBlock::new(b, &format!("layer{}.{k}", stage + 1), cin, cout, stride)?);
                        cin = cout;
                    }
                }
                Backbone::Resnet { stem, blocks }
            }
        })
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let maps = match self {
            Backbone::Desk(blocks) => {
                let mut h = x.clone();
                for block in blocks {
                    h = block.forward(&h, mode)?.relu()?.max_pool2d(2)?;
                }
                h
            }
            Backbone::Resnet { stem, blocks } => {
                let mut h = stem.forward(x, mode)?.relu()?;
                for block in blocks {
                    h = block.forward(&h, mode)?;
                }
                h
            }
        };
        Ok(maps.mean((2, 3))?)
    }

    fn batch_norms(&mut self) -> Vec<&mut BatchNorm2d> {
        match self {
            Backbone::Desk(blocks) => blocks.iter_mut().map(|b| &mut b.bn).collect(),
            Backbone::Resnet { stem, blocks } => {
                let mut out = vec![&mut stem.bn];
                for block in blocks {
                    out.extend(block.batch_norms());
                }
                out
            }
        }
    }
}

/// Feature extractor `h` followed by projection head `g`; `f(x) = g(h(x))`.
#[derive(Clone, Debug)]
pub struct EncoderModel {
    descriptor: ArchitectureDescriptor,
    params: Vec<(String, Var)>,
    backbone: Backbone,
    hidden: Linear,
    output: Linear,
}

impl EncoderModel {
    pub fn new(architecture: Architecture, input_channels: usize, seed: u64) -> Result<Self> {
        let descriptor = ArchitectureDescriptor {
            architecture,
            input_channels,
            representation_dim: architecture.representation_dim(),
            projection_hidden: PROJECTION_HIDDEN,
            projection_dim: PROJECTION_DIM,
        };
        Self::from_descriptor(descriptor, seed)
    }

    fn from_descriptor(descriptor: ArchitectureDescriptor, seed: u64) -> Result<Self> {
        let mut b = ParamBuilder::new(stream_rng(seed, Stream::ModelInit));
        let backbone = Backbone::build(descriptor.architecture, descriptor.input_channels, &mut b)?;
        let hidden = b.linear(
            "projector.0",
            descriptor.representation_dim,
            descriptor.projection_hidden,
            2f32.sqrt(),
        )?;
        let output = b.linear("projector.2", descriptor.projection_hidden, descriptor.projection_dim, 1.0)?;
        Ok(Self {
            descriptor,
            params: b.params,
            backbone,
            hidden,
            output,
        })
    }

    pub fn descriptor(&self) -> &ArchitectureDescriptor {
        &self.descriptor
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Stacks images into an `N × C × H × W` tensor.
    pub fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor> {
        let first = images.first().ok_or(Error::EmptyInput("image batch"))?;
        let (c, h, w) = first.shape();
        if c != self.descriptor.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} channels, got {c}",
                self.descriptor.input_channels
            )));
        }
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if img.shape() != (c, h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "{:?} in a batch of {:?}",
                    img.shape(),
                    (c, h, w)
                )));
            }
            data.extend_from_slice(img.data());
        }
        Ok(Tensor::from_vec(data, (images.len(), c, h, w), &Device::Cpu)?)
    }

    /// `h(x)` in inference mode.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<Tensor> {
        // Eval mode never touches batch-norm state, so a shallow clone suffices.
        self.backbone.clone().forward(x, Mode::Eval)
    }

    /// Representations of `images`, computed in inference mode.
    pub fn encode(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_CHUNK) {
            let reps = self.encode_tensor(&self.batch_tensor(chunk)?)?;
            out.extend(reps.to_vec2::<f32>()?);
        }
        Ok(out)
    }

    /// `g(r)`, L2-normalized with the norm floored at 1e-12.
    pub fn project(&self, representations: &Tensor) -> Result<Tensor> {
        let (_, dim) = representations.dims2()?;
        if dim != self.descriptor.representation_dim {
            return Err(Error::ShapeMismatch(format!(
                "projector expects {}-d input, got {dim}",
                self.descriptor.representation_dim
            )));
        }
        let z = self.output.forward(&self.hidden.forward(representations)?.relu()?)?;
        let norm = z.sqr()?.sum_keepdim(1)?.sqrt()?.maximum(NORM_FLOOR)?;
        Ok(z.broadcast_div(&norm)?)
    }

    /// `f(x) = g(h(x))` with batch statistics; updates running averages.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let reps = self.backbone.forward(x, Mode::Train)?;
        self.project(&reps)
    }

    pub fn to_bytes(&self, config_hash: &str) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        for (name, var) in &self.params {
            tensors.push(NamedTensor::f32(
                name.clone(),
                var.dims().to_vec(),
                var.as_tensor().flatten_all()?.to_vec1()?,
            ));
        }
        let mut model = self.clone();
        for bn in model.backbone.batch_norms() {
            tensors.push(NamedTensor::f32(
                format!("{}.running_mean", bn.name),
                bn.running_mean.dims().to_vec(),
                bn.running_mean.to_vec1()?,
            ));
            tensors.push(NamedTensor::f32(
                format!("{}.running_var", bn.name),
                bn.running_var.dims().to_vec(),
                bn.running_var.to_vec1()?,
            ));
        }
        let mut metadata = HashMap::new();
        metadata.insert("descriptor".into(), serde_json::to_string(&self.descriptor)?);
        metadata.insert("config_hash".into(), config_hash.to_string());
        tensorfile::encode("encoder-checkpoint", &tensors, metadata)
    }

    /// Restores a model and the config hash it was saved with.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let mut decoded = tensorfile::decode("encoder-checkpoint", bytes)?;
        let descriptor: ArchitectureDescriptor = serde_json::from_str(decoded.meta("descriptor")?)?;
        let config_hash = decoded.meta("config_hash")?.to_string();
        let mut model = Self::from_descriptor(descriptor, 0)?;
        for (name, var) in &model.params {
            let (shape, data) = decoded.take_f32(name)?;
            if shape != var.dims() {
                return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
            }
            var.set(&Tensor::from_vec(data, shape, &Device::Cpu)?)?;
        }
        for bn in model.backbone.batch_norms() {
            let (_, mean) = decoded.take_f32(&format!("{}.running_mean", bn.name))?;
            let (_, var) = decoded.take_f32(&format!("{}.running_var", bn.name))?;
            let c = mean.len();
            bn.running_mean = Tensor::from_vec(mean, c, &Device::Cpu)?;
            bn.running_var = Tensor::from_vec(var, c, &Device::Cpu)?;
        }
        Ok((model, config_hash))
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        tensorfile::write_atomic(path, &self.to_bytes(config_hash)?)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        Self::from_bytes(&tensorfile::read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_images(n: usize, side: usize, seed: u64) -> Vec<Image> {
        let mut rng = stream_rng(seed, Stream::Augmentation);
        (0..n)
            .map(|_| Image::new(3, side, side, (0..3 * side * side).map(|_| rng.random::<f32>()).collect()).unwrap())
            .collect()
    }

    #[test]
    fn resnet18_representation_contract() {
        let model = EncoderModel::new(Architecture::Resnet18, 3, 0).unwrap();
        let imgs = random_images(4, 32, 1);
        let refs: Vec<&Image> = imgs.iter().collect();
        let reps = model.encode(&refs).unwrap();
        assert_eq!(reps.len(), 4);
        assert!(reps.iter().all(|r| r.len() == 512));
        // 11.17M in the backbone plus the 512→512→128 head.
        assert_eq!(model.parameter_count(), 11_168_832 + 512 * 512 + 512 + 512 * 128 + 128);
    }

    #[test]
    fn desk_cnn_size_equivariance_and_determinism() {
        let model = EncoderModel::new(Architecture::DeskCnn, 3, 0).unwrap();
        let count = model.parameter_count();
        assert!((400_000..700_000).contains(&count), "{count}");
        let imgs = random_images(5, 16, 2);
        let refs: Vec<&Image> = imgs.iter().collect();
        let a = model.encode(&refs).unwrap();
        assert_eq!(a, model.encode(&refs).unwrap());
        let reversed: Vec<&Image> = imgs.iter().rev().collect();
        let b = model.encode(&reversed).unwrap();
        for (x, y) in a.iter().zip(b.iter().rev()) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn projection_is_unit_norm_even_for_zero_input() {
        let model = EncoderModel::new(Architecture::DeskCnn, 3, 3).unwrap();
        let reps = Tensor::randn(0f32, 1f32, (6, 256), &Device::Cpu).unwrap();
        let zero = Tensor::zeros((1, 256), candle_core::DType::F32, &Device::Cpu).unwrap();
        for z in [model.project(&reps).unwrap(), model.project(&zero).unwrap()] {
            assert_eq!(z.dims()[1], 128);
            for row in z.to_vec2::<f32>().unwrap() {
                let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-6, "{norm}");
            }
        }
    }

    #[test]
    fn wrong_channels_rejected() {
        let model = EncoderModel::new(Architecture::DeskCnn, 3, 0).unwrap();
        let gray = Image::zeros(1, 16, 16);
        assert!(matches!(model.encode(&[&gray]), Err(Error::ShapeMismatch(_))));
        let bad = Tensor::zeros((1, 100), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(model.project(&bad).is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let mut model = EncoderModel::new(Architecture::DeskCnn, 3, 4).unwrap();
        let imgs = random_images(4, 16, 5);
        let refs: Vec<&Image> = imgs.iter().collect();
        // One train-mode pass moves the running statistics away from their defaults.
        model.forward_train(&model.batch_tensor(&refs).unwrap()).unwrap();
        let bytes = model.to_bytes("abc123").unwrap();
        let (back, hash) = EncoderModel::from_bytes(&bytes).unwrap();
        assert_eq!(hash, "abc123");
        assert_eq!(back.descriptor(), model.descriptor());
        assert_eq!(back.encode(&refs).unwrap(), model.encode(&refs).unwrap());
    }

    #[test]
    fn seeded_initialization_is_reproducible() {
        let a = EncoderModel::new(Architecture::DeskCnn, 3, 11).unwrap();
        let b = EncoderModel::new(Architecture::DeskCnn, 3, 11).unwrap();
        let c = EncoderModel::new(Architecture::DeskCnn, 3, 12).unwrap();
        let values = |m: &EncoderModel| -> Vec<Vec<f32>> {
            m.params()
                .iter()
                .map(|(_, v)| v.as_tensor().flatten_all().unwrap().to_vec1().unwrap())
                .collect()
        };
        assert_eq!(values(&a), values(&b));
        assert_ne!(values(&a), values(&c));
    }
}
