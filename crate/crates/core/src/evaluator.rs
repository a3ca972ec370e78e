//! Post-training evaluation: label the memory, fit NCM on its representations,
//! score the test set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datastream::{ClassId, LabeledExample};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{ncm_fit, FeatureExtractor};
use crate::replay_memory::ReplayMemory;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NcmOptions {
    /// L2-normalize every representation before fitting and predicting.
    #[serde(default)]
    pub normalize_representations: bool,
    #[serde(default)]
    pub normalize_means: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    /// Percentage in [0, 100].
    pub final_average_accuracy: f64,
    pub per_class_accuracy: BTreeMap<ClassId, f64>,
    pub num_memory_examples_used: usize,
    pub config_hash: String,
    /// Test classes with no example in memory; all their test items count as errors.
    pub missing_classes: Vec<ClassId>,
}

/// `100 · correct / total`.
pub fn average_accuracy(predictions: &[ClassId], labels: &[ClassId]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels"));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

fn normalized(mut reps: Vec<Vec<f64>>, on: bool) -> Vec<Vec<f64>> {
    if on {
        for r in &mut reps {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            r.iter_mut().for_each(|v| *v /= norm);
        }
    }
    reps
}

pub fn evaluate_final(
    extractor: &dyn FeatureExtractor,
    memory: &ReplayMemory,
    test_set: &[LabeledExample],
    options: NcmOptions,
    config_hash: &str,
) -> Result<EvaluationResult> {
    let labeled = memory.snapshot();
    if labeled.is_empty() {
        return Err(Error::EmptyInput("memory"));
    }
    if test_set.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let memory_images: Vec<&Image> = labeled.iter().map(|e| e.image.as_ref()).collect();
    let memory_labels: Vec<ClassId> = labeled.iter().map(|e| e.class).collect();
    let reps = normalized(extractor.extract(&memory_images)?, options.normalize_representations);
    let classifier = ncm_fit(&reps, &memory_labels, options.normalize_means)?;

    let test_images: Vec<&Image> = test_set.iter().map(|e| e.image.as_ref()).collect();
    let test_labels: Vec<ClassId> = test_set.iter().map(|e| e.label.unseal()).collect();
    let test_reps = normalized(extractor.extract(&test_images)?, options.normalize_representations);
    let predictions = test_reps
        .iter()
        .map(|r| classifier.predict(r))
        .collect::<Result<Vec<_>>>()?;

    let known: BTreeSet<ClassId> = classifier.classes().collect();
    let mut totals: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    for (p, l) in predictions.iter().zip(&test_labels) {
        let entry = totals.entry(*l).or_default();
        entry.1 += 1;
        if p == l {
            entry.0 += 1;
        }
    }
    let missing_classes: Vec<ClassId> = totals.keys().filter(|c| !known.contains(c)).copied().collect();
    if !missing_classes.is_empty() {
        tracing::warn!(?missing_classes, "test classes absent from memory are scored as errors");
    }
    Ok(EvaluationResult {
        final_average_accuracy: average_accuracy(&predictions, &test_labels)?,
        per_class_accuracy: totals
            .into_iter()
            .map(|(c, (hit, n))| (c, 100.0 * hit as f64 / n as f64))
            .collect(),
        num_memory_examples_used: labeled.len(),
        config_hash: config_hash.to_string(),
        missing_classes,
    })
}
