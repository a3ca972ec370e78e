use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use super::config::{DatasetName, RunConfig};
use super::records::{mean_std, persist_record, write_loss_trace, MetricsRecord, RunStatus, SeedFailure, SeedResult, STD_ESTIMATOR};
use crate::augmentation::{StyleModel, Styler};
use crate::datastream::{build_task_sequence, load_dataset_files, stream_batches, subsample_per_class, LabeledExample};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_final, EvaluationResult};
use crate::model::EncoderModel;
use crate::replay_memory::ReplayMemory;
use crate::trainer::{train_online, StepLog};

/// Train and test examples of one dataset.
#[derive(Debug)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

/// Loaded datasets shared across runs and sweep cells.
#[derive(Debug, Default)]
pub struct DatasetCache {
    entries: Mutex<HashMap<(DatasetName, PathBuf), Arc<DatasetSplit>>>,
}

impl DatasetCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an already-built split, e.g. synthetic data.
    pub fn insert(&self, dataset: DatasetName, path: &Path, split: DatasetSplit) {
        self.entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert((dataset, path.to_path_buf()), Arc::new(split));
    }

    pub fn get(&self, dataset: DatasetName, path: &Path) -> Result<Arc<DatasetSplit>> {
        let key = (dataset, path.to_path_buf());
        if let Some(hit) = self.entries.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(Arc::clone(hit));
        }
        let (train_paths, test_paths) = dataset.split_paths(path);
        let split = Arc::new(DatasetSplit {
            train: load_dataset_files(&train_paths, dataset.format())?,
            test: load_dataset_files(&test_paths, dataset.format())?,
        });
        tracing::info!(
            dataset = ?dataset,
            train = split.train.len(),
            test = split.test.len(),
            "dataset loaded"
        );
        self.entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, Arc::clone(&split));
        Ok(split)
    }
}

pub fn load_styler(config: &RunConfig) -> Result<Option<Styler>> {
    if config.augmentation.das == 0 {
        return Ok(None);
    }
    match (&config.style_model, config.style_fallback) {
        (Some(path), _) => Ok(Some(Styler::Model(Box::new(StyleModel::load(path)?)))),
        (None, true) => Ok(Some(Styler::ChannelStats)),
        (None, false) => Err(Error::Config("DAS views need --style-model or --style-fallback".into())),
    }
}

/// Directory holding one seed's artifacts.
pub fn seed_dir(config: &RunConfig, seed: u64) -> PathBuf {
    config.out.join(&config.hash()[..16]).join(format!("seed-{seed}"))
}

/// Stream, train and evaluate for a single seed.
pub fn run_seed(
    config: &RunConfig,
    split: &DatasetSplit,
    styler: Option<&Styler>,
    seed: u64,
    on_step: &mut dyn FnMut(u64, &StepLog),
) -> Result<SeedResult> {
    let started = Instant::now();
    let hash = config.hash();
    let train = match config.per_class_subsample {
        Some(n) => subsample_per_class(&split.train, n, seed),
        None => split.train.clone(),
    };
    let channels = train.first().ok_or(Error::EmptyInput("training set"))?.image.channels();
    let sequence = build_task_sequence(&train, config.num_tasks, seed)?;
    let batch = NonZeroUsize::new(config.stream_batch_size)
        .ok_or_else(|| Error::Config("stream batch size must be at least 1".into()))?;
    let mut model = EncoderModel::new(config.architecture(), channels, seed)?;
    let mut memory = ReplayMemory::new(config.memory_size);
    let report = train_online(
        stream_batches(&train, &sequence, batch),
        &config.train_config(seed),
        &mut model,
        &mut memory,
        styler,
        |step| on_step(seed, step),
    )?;

    let dir = seed_dir(config, seed);
    let loss_trace = dir.join("loss.csv");
    let encoder_checkpoint = dir.join("encoder.safetensors");
    let memory_checkpoint = dir.join("memory.safetensors");
    write_loss_trace(&loss_trace, &hash, &report.steps)?;
    model.save(&encoder_checkpoint, &hash)?;
    memory.save(&memory_checkpoint, &hash)?;

    let evaluation = evaluate_final(&model, &memory, &split.test, config.ncm, &hash)?;
    tracing::info!(seed, accuracy = evaluation.final_average_accuracy, "seed finished");
    Ok(SeedResult {
        seed,
        sgd_steps: report.steps.len(),
        memory_updates: report.memory_updates,
        final_loss: report.steps.last().map(|s| s.loss),
        train_examples: train.len(),
        parameter_count: model.parameter_count(),
        evaluation,
        loss_trace,
        encoder_checkpoint,
        memory_checkpoint,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Runs every seed, aggregates, and appends the record under `config.out`.
/// A failing seed stops the run; the partial record is still persisted,
/// marked failed, and the error is returned.
pub fn run_experiment(
    config: &RunConfig,
    cache: &DatasetCache,
    on_step: &mut dyn FnMut(u64, &StepLog),
) -> Result<MetricsRecord> {
    config.validate()?;
    let started = Instant::now();
    let mut record = MetricsRecord {
        config_hash: config.hash(),
        config: config.clone(),
        tuple: config.tuple().into(),
        per_seed: Vec::new(),
        failures: Vec::new(),
        mean_final_aa: None,
        std_final_aa: None,
        std_estimator: STD_ESTIMATOR.into(),
        wall_clock_secs: 0.0,
        status: RunStatus::Completed,
    };
    let outcome = cache
        .get(config.dataset, &config.data_path)
        .and_then(|split| Ok((split, load_styler(config)?)));
    let mut failure = None;
    match outcome {
        Ok((split, styler)) => {
            for &seed in &config.seeds {
                match run_seed(config, &split, styler.as_ref(), seed, on_step) {
                    Ok(result) => record.per_seed.push(result),
                    Err(e) => {
                        failure = Some(Error::RunFailed {
                            seed,
                            message: e.to_string(),
                        });
                        record.failures.push(SeedFailure {
                            seed,
                            message: e.to_string(),
                        });
                        break;
                    }
                }
            }
        }
        Err(e) => {
            let seed = config.seeds[0];
            record.failures.push(SeedFailure {
                seed,
                message: e.to_string(),
            });
            failure = Some(e);
        }
    }
    if let Some((mean, std)) = mean_std(&record.accuracies()) {
        record.mean_final_aa = Some(mean);
        record.std_final_aa = Some(std);
    }
    if failure.is_some() {
        record.status = RunStatus::Failed;
    }
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    persist_record(&config.out, &record)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(record),
    }
}

/// Re-evaluates saved encoder and memory checkpoints on the config's test set.
pub fn evaluate_checkpoint(
    config: &RunConfig,
    encoder: &Path,
    memory: &Path,
    cache: &DatasetCache,
) -> Result<EvaluationResult> {
    let (model, model_hash) = EncoderModel::load(encoder)?;
    let (memory, memory_hash) = ReplayMemory::load(memory)?;
    if model_hash != memory_hash {
        return Err(Error::Checkpoint(format!(
            "encoder was saved by config {model_hash}, memory by {memory_hash}"
        )));
    }
    let split = cache.get(config.dataset, &config.data_path)?;
    evaluate_final(&model, &memory, &split.test, config.ncm, &model_hash)
}
