use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augmentation::{AugmentationSpec, StandardParams, LAMBDA_HIGH, LAMBDA_LOW};
use crate::datastream::DatasetFormat;
use crate::error::{Error, Result};
use crate::evaluator::NcmOptions;
use crate::model::Architecture;
use crate::trainer::TrainConfig;

/// Environment variable naming the directory that holds downloaded datasets.
pub const DATA_ROOT_ENV: &str = "MVCONT_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Cifar10,
    Cifar100,
    /// `root/{train,test}/<class>/<image>`.
    ImageFolder,
}

impl DatasetName {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cifar10" | "cifar-10" => Ok(Self::Cifar10),
            "cifar100" | "cifar-100" => Ok(Self::Cifar100),
            "image-folder" | "imagefolder" | "folder" => Ok(Self::ImageFolder),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }

    pub fn default_tasks(self) -> Option<usize> {
        match self {
            Self::Cifar10 => Some(5),
            Self::Cifar100 => Some(10),
            Self::ImageFolder => None,
        }
    }

    /// Sub-directory of the data root where the dataset is unpacked.
    pub fn default_dir(self) -> &'static str {
        match self {
            Self::Cifar10 => "cifar-10-batches-bin",
            Self::Cifar100 => "cifar-100-binary",
            Self::ImageFolder => "image-folder",
        }
    }

    pub fn format(self) -> DatasetFormat {
        match self {
            Self::Cifar10 => DatasetFormat::CIFAR10,
            Self::Cifar100 => DatasetFormat::CIFAR100,
            Self::ImageFolder => DatasetFormat::ImageDirectory,
        }
    }

    /// Train and test inputs under `root`.
    pub fn split_paths(self, root: &Path) -> (Vec<PathBuf>, Vec<PathBuf>) {
        match self {
            Self::Cifar10 => (
                (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect(),
                vec![root.join("test_batch.bin")],
            ),
            Self::Cifar100 => (vec![root.join("train.bin")], vec![root.join("test.bin")]),
            Self::ImageFolder => (vec![root.join("train")], vec![root.join("test")]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetName,
    pub data_path: PathBuf,
    pub num_tasks: usize,
    pub memory_size: usize,
    pub stream_batch_size: usize,
    pub mem_batch_size: usize,
    pub mem_iters: usize,
    pub augmentation: AugmentationSpec,
    pub temperature: f64,
    pub lr: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Small CNN encoder and a per-class training subsample.
    pub desk_scale: bool,
    pub per_class_subsample: Option<usize>,
    pub style_model: Option<PathBuf>,
    pub style_fallback: bool,
    pub ncm: NcmOptions,
}

/// Values layered over the defaults: first a TOML file, then flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub dataset: Option<String>,
    pub data_path: Option<PathBuf>,
    pub tasks: Option<usize>,
    pub memory_size: Option<usize>,
    pub stream_batch_size: Option<usize>,
    pub mem_batch_size: Option<usize>,
    pub mem_iters: Option<usize>,
    pub views: Option<usize>,
    /// DAM, DAC and DAS counts.
    pub daa: Option<[usize; 3]>,
    pub temperature: Option<f64>,
    pub lr: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub desk_scale: Option<bool>,
    pub per_class_subsample: Option<usize>,
    pub style_model: Option<PathBuf>,
    pub style_fallback: Option<bool>,
    pub standard: Option<StandardParams>,
    pub lambda_low: Option<f64>,
    pub lambda_high: Option<f64>,
    pub normalize_representations: Option<bool>,
    pub normalize_means: Option<bool>,
}

impl ConfigOverrides {
    /// Fields set in `other` win.
    pub fn merged(self, other: ConfigOverrides) -> ConfigOverrides {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigOverrides { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            dataset, data_path, tasks, memory_size, stream_batch_size, mem_batch_size, mem_iters, views, daa,
            temperature, lr, seeds, out, desk_scale, per_class_subsample, style_model, style_fallback, standard,
            lambda_low, lambda_high, normalize_representations, normalize_means
        )
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses `M,C,S` into DAM, DAC and DAS counts.
pub fn parse_daa(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("--daa expects three comma-separated counts, got {s:?}")));
    }
    let mut out = [0; 3];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p
            .parse()
            .map_err(|_| Error::Config(format!("--daa count {p:?} is not a non-negative integer")))?;
    }
    Ok(out)
}

pub const DEFAULT_SUBSAMPLE_PER_CLASS: usize = 500;

/// Resolves overrides against the defaults. `data_root` stands in for the
/// data-root environment variable when no explicit path is given.
pub fn parse_config(overrides: &ConfigOverrides, data_root: Option<&Path>) -> Result<RunConfig> {
    let dataset = DatasetName::parse(overrides.dataset.as_deref().unwrap_or("cifar10"))?;
    let data_path = match (&overrides.data_path, data_root) {
        (Some(p), _) => p.clone(),
        (None, Some(root)) => root.join(dataset.default_dir()),
        (None, None) => {
            return Err(Error::Config(format!(
                "missing dataset path: pass --data-path or set {DATA_ROOT_ENV}"
            )))
        }
    };
    let num_tasks = overrides
        .tasks
        .or(dataset.default_tasks())
        .ok_or_else(|| Error::Config("--tasks is required for image-folder datasets".into()))?;
    let [dam, dac, das] = overrides.daa.unwrap_or([0, 0, 0]);
    let mut augmentation = AugmentationSpec::new(overrides.views.unwrap_or(1), dam, dac, das);
    if let Some(standard) = &overrides.standard {
        augmentation.standard = standard.clone();
    }
    augmentation.lambda_low = overrides.lambda_low.unwrap_or(LAMBDA_LOW);
    augmentation.lambda_high = overrides.lambda_high.unwrap_or(LAMBDA_HIGH);
    let desk_scale = overrides.desk_scale.unwrap_or(false);
    let config = RunConfig {
        dataset,
        data_path,
        num_tasks,
        memory_size: overrides.memory_size.unwrap_or(200),
        stream_batch_size: overrides.stream_batch_size.unwrap_or(10),
        mem_batch_size: overrides.mem_batch_size.unwrap_or(200),
        mem_iters: overrides.mem_iters.unwrap_or(1),
        augmentation,
        temperature: overrides.temperature.unwrap_or(0.07),
        lr: overrides.lr.unwrap_or(0.1),
        seeds: overrides.seeds.clone().unwrap_or_else(|| vec![0, 1, 2]),
        out: overrides.out.clone().unwrap_or_else(|| PathBuf::from("runs")),
        desk_scale,
        per_class_subsample: overrides
            .per_class_subsample
            .or(desk_scale.then_some(DEFAULT_SUBSAMPLE_PER_CLASS)),
        style_model: overrides.style_model.clone(),
        style_fallback: overrides.style_fallback.unwrap_or(false),
        ncm: NcmOptions {
            normalize_representations: overrides.normalize_representations.unwrap_or(false),
            normalize_means: overrides.normalize_means.unwrap_or(false),
        },
    };
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            return Err(Error::Config("tasks must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.memory_size == 0 {
            return Err(Error::Config("memory size must be at least 1; evaluation labels the memory".into()));
        }
        if self.per_class_subsample == Some(0) {
            return Err(Error::Config("per-class subsample must be at least 1".into()));
        }
        if self.augmentation.das > 0 && self.style_model.is_none() && !self.style_fallback {
            return Err(Error::Config(
                "DAS views need --style-model or --style-fallback".into(),
            ));
        }
        self.train_config(0).validate()
    }

    pub fn architecture(&self) -> Architecture {
        if self.desk_scale {
            Architecture::DeskCnn
        } else {
            Architecture::Resnet18
        }
    }

    /// `(p, q, #DAM, #DAC, #DAS)`.
    pub fn tuple(&self) -> (usize, usize, usize, usize, usize) {
        let a = &self.augmentation;
        (a.standard_views, self.mem_iters, a.dam, a.dac, a.das)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            stream_batch_size: self.stream_batch_size,
            mem_batch_size: self.mem_batch_size,
            mem_iters: self.mem_iters,
            augmentation: self.augmentation.clone(),
            temperature: self.temperature,
            lr: self.lr,
            seed,
            memory_capacity: self.memory_size,
        }
    }

    /// The bytes that the config hash is computed over.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("RunConfig always serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Named method rows: `ours-7-1-0-0-0` and `ours-4-1-1-1-1`.
    pub fn preset(name: &str) -> Result<ConfigOverrides> {
        let (views, daa, fallback) = match name {
            "ours-7-1-0-0-0" => (7, [0, 0, 0], None),
            "ours-4-1-1-1-1" => (4, [1, 1, 1], Some(true)),
            "simclr-er" => (1, [0, 0, 0], None),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        Ok(ConfigOverrides {
            views: Some(views),
            mem_iters: Some(1),
            daa: Some(daa),
            style_fallback: fallback,
            ..ConfigOverrides::default()
        })
    }
}
