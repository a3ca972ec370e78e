//! Fixed-capacity reservoir memory with uniform random retrieval.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;

use crate::datastream::{ClassId, ExampleId, LabeledExample, SealedLabel, StreamBatch};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::tensorfile::{self, NamedTensor};

#[derive(Clone, Debug)]
pub struct ReplayMemory {
    capacity: usize,
    slots: Vec<LabeledExample>,
    seen_count: u64,
}

/// Examples drawn from memory for one training iteration.
#[derive(Clone, Debug, Default)]
pub struct MemoryBatch {
    pub examples: Vec<LabeledExample>,
}

/// A memory slot with its label revealed, for the post-training labeling step.
#[derive(Clone, Debug, PartialEq)]
pub struct UnsealedExample {
    pub id: ExampleId,
    pub image: Arc<Image>,
    pub class: ClassId,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            slots: Vec::with_capacity(capacity),
            seen_count: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn slots(&self) -> &[LabeledExample] {
        &self.slots
    }

    /// Offers every example of `batch`, in stream order, to the reservoir.
    ///
    /// For the n-th offered item: fill a free slot if any, otherwise draw
    /// `u ~ U[0,1)` and, when `u < M/n`, draw a slot uniformly and replace it.
    pub fn update(&mut self, batch: &StreamBatch, rng: &mut Rng) {
        for example in &batch.examples {
            self.offer(example.clone(), rng);
        }
    }

    pub fn offer(&mut self, example: LabeledExample, rng: &mut Rng) {
        self.seen_count += 1;
        if self.capacity == 0 {
            return;
        }
        if self.slots.len() < self.capacity {
            self.slots.push(example);
            return;
        }
        let accept = self.capacity as f64 / self.seen_count as f64;
        if rng.random::<f64>() < accept {
            let slot = rng.random_range(0..self.capacity);
            self.slots[slot] = example;
        }
    }

    /// Uniform draw without replacement of `min(n, len)` stored examples, in random order.
    pub fn retrieve(&self, n: usize, rng: &mut Rng) -> MemoryBatch {
        let amount = n.min(self.slots.len());
        let examples = rand::seq::index::sample(rng, self.slots.len(), amount)
            .into_iter()
            .map(|i| self.slots[i].clone())
            .collect();
        MemoryBatch { examples }
    }

    /// All slots with labels revealed. Call only once training is over.
    pub fn snapshot(&self) -> Vec<UnsealedExample> {
        self.slots
            .iter()
            .map(|e| UnsealedExample {
                id: e.id,
                image: Arc::clone(&e.image),
                class: e.label.unseal(),
            })
            .collect()
    }

    pub fn to_bytes(&self, config_hash: &str) -> Result<Vec<u8>> {
        let mut metadata = HashMap::new();
        metadata.insert("config_hash".into(), config_hash.to_string());
        metadata.insert("capacity".into(), self.capacity.to_string());
        metadata.insert("seen_count".into(), self.seen_count.to_string());
        let n = self.slots.len();
        let (c, h, w) = self.slots.first().map(|e| e.image.shape()).unwrap_or((0, 0, 0));
        let mut pixels = Vec::with_capacity(n * c * h * w);
        for slot in &self.slots {
            if slot.image.shape() != (c, h, w) {
                return Err(Error::ShapeMismatch("memory holds images of different shapes".into()));
            }
            pixels.extend_from_slice(slot.image.data());
        }
        let tensors = [
            NamedTensor::f32("images", vec![n, c, h, w], pixels),
            NamedTensor::i64("ids", vec![n], self.slots.iter().map(|e| e.id.0 as i64).collect()),
            NamedTensor::i64(
                "labels",
                vec![n],
                self.slots.iter().map(|e| e.label.unseal().0 as i64).collect(),
            ),
        ];
        tensorfile::encode("replay-memory", &tensors, metadata)
    }

    /// Restores a memory and the config hash it was saved with.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let mut decoded = tensorfile::decode("replay-memory", bytes)?;
        let parse = |key: &str| -> Result<u64> {
            decoded
                .meta(key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad {key}")))
        };
        let config_hash = decoded.meta("config_hash")?.to_string();
        let capacity = parse("capacity")? as usize;
        let seen_count = parse("seen_count")?;
        let (shape, pixels) = decoded.take_f32("images")?;
        let (_, ids) = decoded.take_i64("ids")?;
        let (_, labels) = decoded.take_i64("labels")?;
        let [n, c, h, w]: [usize; 4] = shape
            .try_into()
            .map_err(|_| Error::Checkpoint("images tensor must be 4-d".into()))?;
        if ids.len() != n || labels.len() != n || n > capacity {
            return Err(Error::Checkpoint("inconsistent memory tensors".into()));
        }
        let plane = c * h * w;
        let slots = (0..n)
            .map(|i| {
                Ok(LabeledExample {
                    id: ExampleId(ids[i] as u64),
                    image: Arc::new(Image::new(c, h, w, pixels[i * plane..(i + 1) * plane].to_vec())?),
                    label: SealedLabel::new(ClassId(labels[i] as u32)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((
            Self {
                capacity,
                slots,
                seen_count,
            },
            config_hash,
        ))
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        tensorfile::write_atomic(path, &self.to_bytes(config_hash)?)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        Self::from_bytes(&tensorfile::read_file(path)?)
    }
}
