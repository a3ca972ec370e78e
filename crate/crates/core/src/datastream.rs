//! Dataset loading and class-incremental one-pass streams.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExampleId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub u32);

thread_local! {
    static LABEL_READS: Cell<u64> = const { Cell::new(0) };
}

/// Number of times a label has been unsealed on the current thread.
///
/// The training path never unseals; tests use the counter to check that.
pub fn label_reads() -> u64 {
    LABEL_READS.with(Cell::get)
}

/// A class label that travels with its example but is hidden from the learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SealedLabel(ClassId);

impl SealedLabel {
    pub fn new(class: ClassId) -> Self {
        Self(class)
    }

    /// Reveals the label. Only dataset construction and evaluation call this.
    pub fn unseal(&self) -> ClassId {
        LABEL_READS.with(|c| c.set(c.get() + 1));
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct LabeledExample {
    pub id: ExampleId,
    pub image: Arc<Image>,
    pub label: SealedLabel,
}

impl LabeledExample {
    pub fn new(id: ExampleId, image: Image, class: ClassId) -> Self {
        Self {
            id,
            image: Arc::new(image),
            label: SealedLabel::new(class),
        }
    }
}

impl PartialEq for LabeledExample {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.label == other.label && self.image == other.image
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// CIFAR binary records: `label_bytes` label bytes (the last one is used)
    /// followed by 3072 channel-major pixel bytes.
    NativeBinary { label_bytes: usize },
    /// `root/<class_name>/<image file>`, class ids by sorted class name.
    ImageDirectory,
}

impl DatasetFormat {
    pub const CIFAR10: DatasetFormat = DatasetFormat::NativeBinary { label_bytes: 1 };
    pub const CIFAR100: DatasetFormat = DatasetFormat::NativeBinary { label_bytes: 2 };
}

const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Loads every example under `path`. Ids are assigned in load order.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<LabeledExample>> {
    let files = if path.is_dir() && matches!(format, DatasetFormat::NativeBinary { .. }) {
        let mut files: Vec<PathBuf> = read_dir_sorted(path)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        files.retain(|p| p.file_name().is_some_and(|n| n != "batches.meta.bin"));
        files
    } else {
        vec![path.to_path_buf()]
    };
    load_dataset_files(&files, format)
}

/// Loads and concatenates several files (native-binary) or directories.
pub fn load_dataset_files(paths: &[PathBuf], format: DatasetFormat) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for path in paths {
        if !path.exists() {
            return Err(Error::io(path, std::io::ErrorKind::NotFound.into()));
        }
        match format {
            DatasetFormat::NativeBinary { label_bytes } => load_native_binary(path, label_bytes, &mut out)?,
            DatasetFormat::ImageDirectory => load_image_directory(path, &mut out)?,
        }
    }
    if out.is_empty() {
        return Err(Error::NoExamples(paths.first().cloned().unwrap_or_default()));
    }
    Ok(out)
}

fn read_dir_sorted(path: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn load_native_binary(path: &Path, label_bytes: usize, out: &mut Vec<LabeledExample>) -> Result<()> {
    if label_bytes == 0 {
        return Err(Error::MalformedDataset {
            path: path.into(),
            reason: "records need at least one label byte".into(),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let record = label_bytes + CIFAR_PIXELS;
    if bytes.len() % record != 0 {
        return Err(Error::MalformedDataset {
            path: path.into(),
            reason: format!("{} bytes is not a multiple of the {record}-byte record", bytes.len()),
        });
    }
    for chunk in bytes.chunks_exact(record) {
        let label = chunk[label_bytes - 1];
        let image = Image::from_planar_u8(3, CIFAR_SIDE, CIFAR_SIDE, &chunk[label_bytes..])?;
        let id = ExampleId(out.len() as u64);
        out.push(LabeledExample::new(id, image, ClassId(label as u32)));
    }
    Ok(())
}

fn load_image_directory(root: &Path, out: &mut Vec<LabeledExample>) -> Result<()> {
    let class_dirs: Vec<PathBuf> = read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()).collect();
    let mut expected: Option<(usize, usize, usize)> = None;
    for (class_index, dir) in class_dirs.iter().enumerate() {
        for file in read_dir_sorted(dir)? {
            if !file.is_file() {
                continue;
            }
            let decoded = image::open(&file).map_err(|e| Error::MalformedDataset {
                path: file.clone(),
                reason: e.to_string(),
            })?;
            let rgb = decoded.to_rgb8();
            let (w, h) = rgb.dimensions();
            let shape = (3, h as usize, w as usize);
            match expected {
                None => expected = Some(shape),
                Some(e) if e != shape => {
                    return Err(Error::InconsistentDimensions {
                        path: file,
                        expected: e,
                        found: shape,
                    })
                }
                Some(_) => {}
            }
            let image = Image::from_interleaved_u8(3, h as usize, w as usize, rgb.as_raw())?;
            let id = ExampleId(out.len() as u64);
            out.push(LabeledExample::new(id, image, ClassId(class_index as u32)));
        }
    }
    Ok(())
}

/// Keeps at most `per_class` examples of each class, chosen by seed. Original order is kept.
pub fn subsample_per_class(examples: &[LabeledExample], per_class: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = stream_rng(seed, Stream::Subsample);
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        by_class.entry(ex.label.unseal()).or_default().push(i);
    }
    let mut keep = Vec::new();
    for indices in by_class.values_mut() {
        indices.shuffle(&mut rng);
        keep.extend(indices.iter().take(per_class).copied());
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| examples[i].clone()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub classes: Vec<ClassId>,
    indices: Vec<usize>,
    ids: Vec<ExampleId>,
}

impl Task {
    pub fn ids(&self) -> &[ExampleId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSequence {
    pub tasks: Vec<Task>,
    pub classes_per_task: usize,
    pub num_tasks: usize,
}

impl TaskSequence {
    pub fn total_examples(&self) -> usize {
        self.tasks.iter().map(Task::len).sum()
    }
}

/// Splits the classes into `num_tasks` disjoint groups in a seeded random order
/// and shuffles each task's examples with the same seed.
pub fn build_task_sequence(examples: &[LabeledExample], num_tasks: usize, seed: u64) -> Result<TaskSequence> {
    let labels: Vec<ClassId> = examples.iter().map(|e| e.label.unseal()).collect();
    let classes: BTreeSet<ClassId> = labels.iter().copied().collect();
    if num_tasks == 0 || classes.is_empty() || !classes.len().is_multiple_of(num_tasks) {
        return Err(Error::IndivisibleClasses {
            classes: classes.len(),
            tasks: num_tasks,
        });
    }
    let classes_per_task = classes.len() / num_tasks;
    let mut rng = stream_rng(seed, Stream::DataOrder);
    let mut order: Vec<ClassId> = classes.into_iter().collect();
    order.shuffle(&mut rng);

    let mut tasks = Vec::with_capacity(num_tasks);
    for group in order.chunks(classes_per_task) {
        let members: BTreeSet<ClassId> = group.iter().copied().collect();
        let mut indices: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, c)| members.contains(c))
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(&mut rng);
        let ids = indices.iter().map(|&i| examples[i].id).collect();
        tasks.push(Task {
            classes: group.to_vec(),
            indices,
            ids,
        });
    }
    Ok(TaskSequence {
        tasks,
        classes_per_task,
        num_tasks,
    })
}

/// One unit of the online stream.
#[derive(Clone, Debug)]
pub struct StreamBatch {
    pub examples: Vec<LabeledExample>,
    task_index: usize,
}

impl StreamBatch {
    pub fn new(examples: Vec<LabeledExample>) -> Self {
        Self {
            examples,
            task_index: 0,
        }
    }

    /// Hidden bookkeeping for logs; the learner has no use for it.
    pub fn task_index_metadata(&self) -> usize {
        self.task_index
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Single-pass iterator over the task sequence.
pub struct StreamBatches<'a> {
    examples: &'a [LabeledExample],
    sequence: &'a TaskSequence,
    batch_size: usize,
    task: usize,
    offset: usize,
}

impl Iterator for StreamBatches<'_> {
    type Item = StreamBatch;

    fn next(&mut self) -> Option<StreamBatch> {
        loop {
            let task = self.sequence.tasks.get(self.task)?;
            if self.offset >= task.indices.len() {
                self.task += 1;
                self.offset = 0;
                continue;
            }
            let end = (self.offset + self.batch_size).min(task.indices.len());
            let examples = task.indices[self.offset..end]
                .iter()
                .map(|&i| self.examples[i].clone())
                .collect();
            self.offset = end;
            return Some(StreamBatch {
                examples,
                task_index: self.task,
            });
        }
    }
}

/// Streams `examples` task by task. A task's last batch may be short; batches never span tasks.
pub fn stream_batches<'a>(
    examples: &'a [LabeledExample],
    sequence: &'a TaskSequence,
    batch_size: NonZeroUsize,
) -> StreamBatches<'a> {
    StreamBatches {
        examples,
        sequence,
        batch_size: batch_size.get(),
        task: 0,
        offset: 0,
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::synthetic;
    use super::*;

    fn nz(n: usize) -> NonZeroUsize {
        NonZeroUsize::new(n).unwrap()
    }

    #[test]
    fn cifar_like_split_shapes() {
        let data = synthetic(10, 3, 4);
        let seq = build_task_sequence(&data, 5, 0).unwrap();
        assert_eq!(seq.tasks.len(), 5);
        assert!(seq.tasks.iter().all(|t| t.classes.len() == 2));
        let data = synthetic(100, 1, 2);
        let seq = build_task_sequence(&data, 10, 0).unwrap();
        assert!(seq.tasks.iter().all(|t| t.classes.len() == 10));
    }

    #[test]
    fn indivisible_classes_rejected() {
        let data = synthetic(10, 2, 2);
        assert!(matches!(
            build_task_sequence(&data, 3, 0),
            Err(Error::IndivisibleClasses { classes: 10, tasks: 3 })
        ));
    }

    #[test]
    fn exact_and_remainder_batches() {
        let data = synthetic(2, 50, 2);
        let seq = build_task_sequence(&data, 1, 3).unwrap();
        let sizes: Vec<usize> = stream_batches(&data, &seq, nz(10)).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![10; 10]);

        // 105 examples in one task: the last batch carries the remainder.
        let data = synthetic(3, 35, 2);
        let seq = build_task_sequence(&data, 1, 3).unwrap();
        let sizes: Vec<usize> = stream_batches(&data, &seq, nz(10)).map(|b| b.len()).collect();
        assert_eq!(sizes.len(), 11);
        assert_eq!(*sizes.last().unwrap(), 5);
    }

    #[test]
    fn batches_never_span_tasks() {
        let data = synthetic(4, 7, 2);
        let seq = build_task_sequence(&data, 2, 1).unwrap();
        for batch in stream_batches(&data, &seq, nz(4)) {
            let task = &seq.tasks[batch.task_index_metadata()];
            assert!(batch.examples.iter().all(|e| task.classes.contains(&e.label.unseal())));
        }
    }

    #[test]
    fn subsample_caps_each_class() {
        let data = synthetic(3, 10, 2);
        let sub = subsample_per_class(&data, 4, 9);
        assert_eq!(sub.len(), 12);
        let ids: Vec<_> = sub.iter().map(|e| e.id).collect();
        let again: Vec<_> = subsample_per_class(&data, 4, 9).iter().map(|e| e.id).collect();
        assert_eq!(ids, again);
    }

    #[test]
    fn empty_directory_has_no_examples() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path(), DatasetFormat::ImageDirectory).unwrap_err();
        assert!(err.to_string().contains("no examples found"));
    }

    #[test]
    fn truncated_binary_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        fs::write(&path, vec![0u8; 3073 + 10]).unwrap();
        assert!(matches!(
            load_dataset(&path, DatasetFormat::CIFAR10),
            Err(Error::MalformedDataset { .. })
        ));
    }
}
