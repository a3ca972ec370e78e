//! The online training loop: one pass over the stream, `q` contrastive SGD
//! steps per incoming batch, then a reservoir update.

use std::collections::HashMap;
use std::time::Instant;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::augmentation::{AugmentationSpec, Styler};
use crate::contrastive::{build_many_view_batch, mvcont_loss, EmbeddingBatch, ManyViewBatch};
use crate::datastream::{ExampleId, LabeledExample, StreamBatch};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::EncoderModel;
use crate::replay_memory::ReplayMemory;
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stream_batch_size: usize,
    pub mem_batch_size: usize,
    pub mem_iters: usize,
    pub augmentation: AugmentationSpec,
    pub temperature: f64,
    pub lr: f64,
    pub seed: u64,
    pub memory_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stream_batch_size: 10,
            mem_batch_size: 200,
            mem_iters: 1,
            augmentation: AugmentationSpec::new(1, 0, 0, 0),
            temperature: 0.07,
            lr: 0.1,
            seed: 0,
            memory_capacity: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stream_batch_size == 0 {
            return Err(Error::Config("stream batch size must be at least 1".into()));
        }
        if self.mem_iters == 0 {
            return Err(Error::Config("mem_iters must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.augmentation.validate()
    }
}

/// One SGD step's record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub stream_batch: usize,
    pub iteration: usize,
    pub loss: f64,
    pub memory_fill: usize,
    pub batch_size: usize,
    pub views: usize,
    pub elapsed_ms: f64,
}

/// Per-example participation, counted at the call sites.
#[derive(Clone, Debug, Default)]
pub struct OnePassCounters {
    pub memory_offers: HashMap<ExampleId, usize>,
    pub stream_loss_uses: HashMap<ExampleId, usize>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub memory_updates: usize,
    pub counters: OnePassCounters,
}

/// `θ ← θ − lr·∇θ`. Parameters without a gradient are left alone.
pub fn sgd_step(params: &[(String, Var)], grads: &GradStore, lr: f64) -> Result<()> {
    let mut updates = Vec::with_capacity(params.len());
    for (name, var) in params {
        let Some(grad) = grads.get(var.as_tensor()) else {
            continue;
        };
        let values: Vec<f32> = grad.flatten_all()?.to_vec1()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
        updates.push((var, grad));
    }
    for (var, grad) in updates {
        var.set(&(var.as_tensor() - (grad * lr)?)?)?;
    }
    Ok(())
}

/// Forward pass, loss, backward pass and update on one many-view batch.
/// Returns the loss before the update.
pub fn contrastive_step(model: &mut EncoderModel, batch: &ManyViewBatch, temperature: f64, lr: f64) -> Result<f64> {
    let images: Vec<&Image> = batch.images.iter().collect();
    let x = model.batch_tensor(&images)?;
    let z = model.forward_train(&x)?;
    let (n, dim) = z.dims2()?;
    let rows: Vec<f32> = z.flatten_all()?.to_vec1()?;
    let embeddings = EmbeddingBatch::from_projected(&rows, dim, batch.source_ids.clone());
    let out = match embeddings {
        Ok(e) => mvcont_loss(&e, temperature)?,
        Err(Error::NotNormalized { norm, .. }) => {
            return Err(Error::NonFiniteLoss {
                step: 0,
                value: norm,
                views: n,
                memory_fill: 0,
            })
        }
        Err(e) => return Err(e),
    };
    if !out.loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            value: out.loss,
            views: n,
            memory_fill: 0,
        });
    }
    // d/dθ Σ z ⊙ stopgrad(∂L/∂z) is exactly ∂L/∂θ.
    let upstream = Tensor::from_vec(
        out.gradient.iter().map(|&g| g as f32).collect::<Vec<_>>(),
        (n, dim),
        z.device(),
    )?;
    let surrogate = (&z * &upstream)?.sum_all()?;
    let grads = surrogate.backward()?;
    sgd_step(model.params(), &grads, lr)?;
    Ok(out.loss)
}

/// Runs the online loop over `stream`. For each stream batch `B_s`, `q` times:
/// retrieve `B_m`, build views of `B_s ∪ B_m`, take one SGD step. Then offer
/// `B_s` to the memory. `observer` sees every step as it completes.
pub fn train_online<I>(
    stream: I,
    config: &TrainConfig,
    model: &mut EncoderModel,
    memory: &mut ReplayMemory,
    styler: Option<&Styler>,
    mut observer: impl FnMut(&StepLog),
) -> Result<TrainReport>
where
    I: IntoIterator<Item = StreamBatch>,
{
    config.validate()?;
    let mut reservoir_rng = stream_rng(config.seed, Stream::Reservoir);
    let mut retrieval_rng = stream_rng(config.seed, Stream::Retrieval);
    let mut augment_rng = stream_rng(config.seed, Stream::Augmentation);
    let mut report = TrainReport::default();

    for (batch_index, stream_batch) in stream.into_iter().enumerate() {
        if stream_batch.is_empty() {
            continue;
        }
        for iteration in 0..config.mem_iters {
            let started = Instant::now();
            let recalled = memory.retrieve(config.mem_batch_size, &mut retrieval_rng);
            let mut combined: Vec<LabeledExample> = stream_batch.examples.clone();
            combined.extend(recalled.examples);
            let views = build_many_view_batch(&combined, &config.augmentation, &stream_batch, &mut augment_rng, styler)?;
            let step = report.steps.len();
            let loss = contrastive_step(model, &views, config.temperature, config.lr).map_err(|e| match e {
                Error::NonFiniteLoss { value, views, .. } => Error::NonFiniteLoss {
                    step,
                    value,
                    views,
                    memory_fill: memory.len(),
                },
                other => other,
            })?;
            for example in &stream_batch.examples {
                *report.counters.stream_loss_uses.entry(example.id).or_default() += 1;
            }
            let log = StepLog {
                step,
                stream_batch: batch_index,
                iteration,
                loss,
                memory_fill: memory.len(),
                batch_size: combined.len(),
                views: views.len(),
                elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            };
            tracing::debug!(step, loss, memory_fill = log.memory_fill, "sgd step");
            observer(&log);
            report.steps.push(log);
        }
        for example in &stream_batch.examples {
            *report.counters.memory_offers.entry(example.id).or_default() += 1;
        }
        memory.update(&stream_batch, &mut reservoir_rng);
        report.memory_updates += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastream::fixtures::synthetic;
    use crate::datastream::{build_task_sequence, label_reads, stream_batches};
    use crate::model::Architecture;
    use candle_core::Device;
    use std::num::NonZeroUsize;

    fn tiny_config(q: usize) -> TrainConfig {
        TrainConfig {
            mem_batch_size: 10,
            mem_iters: q,
            memory_capacity: 10,
            ..TrainConfig::default()
        }
    }

    /// Also returns how many labels were read inside the training loop.
    fn run(q: usize) -> (TrainReport, ReplayMemory, u64) {
        let data = synthetic(4, 25, 16);
        let seq = build_task_sequence(&data, 2, 0).unwrap();
        let config = tiny_config(q);
        let mut model = EncoderModel::new(Architecture::DeskCnn, 3, 0).unwrap();
        let mut memory = ReplayMemory::new(config.memory_capacity);
        let stream = stream_batches(&data, &seq, NonZeroUsize::new(10).unwrap());
        let before = label_reads();
        let report = train_online(stream, &config, &mut model, &mut memory, None, |_| {}).unwrap();
        (report, memory, label_reads() - before)
    }

    #[test]
    fn loop_counts_follow_the_algorithm() {
        let (report, memory, reads) = run(1);
        assert_eq!(reads, 0);
        assert_eq!(report.steps.len(), 10);
        assert_eq!(report.memory_updates, 10);
        assert_eq!(memory.seen_count(), 100);
        assert_eq!(report.steps[0].batch_size, 10);
        assert_eq!(report.steps[0].memory_fill, 0);
        assert_eq!(report.steps[1].batch_size, 20);
        assert!(report.counters.memory_offers.values().all(|&c| c == 1));
        assert!(report.counters.stream_loss_uses.values().all(|&c| c == 1));
        assert_eq!(report.counters.memory_offers.len(), 100);
    }

    #[test]
    fn memory_iterations_multiply_steps_only() {
        let (report, _, _) = run(4);
        assert_eq!(report.steps.len(), 40);
        assert_eq!(report.memory_updates, 10);
        assert!(report.counters.stream_loss_uses.values().all(|&c| c == 4));
        assert!(report.counters.memory_offers.values().all(|&c| c == 1));
    }

    #[test]
    fn training_is_reproducible() {
        let a: Vec<f64> = run(1).0.steps.iter().map(|s| s.loss).collect();
        let b: Vec<f64> = run(1).0.steps.iter().map(|s| s.loss).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_update_rule() {
        let w = Var::new(&[1f32], &Device::Cpu).unwrap();
        let loss = (w.as_tensor() * 2.0).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let params = vec![("w".to_string(), w.clone())];
        sgd_step(&params, &grads, 0.1).unwrap();
        let v: Vec<f32> = w.as_tensor().to_vec1().unwrap();
        assert!((v[0] - 0.8).abs() < 1e-7);

        let zero = (w.as_tensor() * 0.0).unwrap().sum_all().unwrap();
        let grads = zero.backward().unwrap();
        sgd_step(&params, &grads, 0.1).unwrap();
        assert_eq!(w.as_tensor().to_vec1::<f32>().unwrap(), v);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let w = Var::new(&[1f32], &Device::Cpu).unwrap();
        let loss = (w.as_tensor() * f64::NAN).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let params = vec![("w".to_string(), w.clone())];
        assert!(matches!(sgd_step(&params, &grads, 0.1), Err(Error::NonFiniteGradient(_))));
        assert_eq!(w.as_tensor().to_vec1::<f32>().unwrap(), vec![1.0]);
    }

    #[test]
    fn loss_decreases_on_a_fixed_batch() {
        let data = synthetic(4, 1, 16);
        let stream = StreamBatch::new(data.clone());
        let mut rng = stream_rng(0, Stream::Augmentation);
        let views = build_many_view_batch(&data, &AugmentationSpec::new(1, 1, 0, 0), &stream, &mut rng, None).unwrap();
        let mut model = EncoderModel::new(Architecture::DeskCnn, 3, 1).unwrap();
        let losses: Vec<f64> = (0..50)
            .map(|_| contrastive_step(&mut model, &views, 0.07, 0.1).unwrap())
            .collect();
        let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = losses[45..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig { mem_iters: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { temperature: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..TrainConfig::default() }.validate().is_err());
    }
}
