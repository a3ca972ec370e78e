use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datastream::ClassId;
use crate::error::{Error, Result};

/// Nearest-class-mean classifier over extractor representations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NcmClassifier {
    pub class_means: BTreeMap<ClassId, Vec<f64>>,
    /// When set, each mean is rescaled to unit norm after fitting.
    pub normalize_means: bool,
}

impl NcmClassifier {
    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.class_means.keys().copied()
    }

    pub fn is_fitted(&self) -> bool {
        !self.class_means.is_empty()
    }

    pub fn predict(&self, representation: &[f64]) -> Result<ClassId> {
        ncm_predict(self, representation)
    }
}

pub fn ncm_fit(representations: &[Vec<f64>], labels: &[ClassId], normalize_means: bool) -> Result<NcmClassifier> {
    if representations.is_empty() {
        return Err(Error::EmptyInput("representations"));
    }
    if representations.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: representations.len(),
            right: labels.len(),
        });
    }
    let dim = representations[0].len();
    let mut sums: BTreeMap<ClassId, (Vec<f64>, usize)> = BTreeMap::new();
    for (rep, &label) in representations.iter().zip(labels) {
        if rep.len() != dim {
            return Err(Error::ShapeMismatch(format!("representation of dim {} among dim {dim}", rep.len())));
        }
        let (sum, count) = sums.entry(label).or_insert_with(|| (vec![0.0; dim], 0));
        sum.iter_mut().zip(rep).for_each(|(s, r)| *s += r);
        *count += 1;
    }
    let class_means = sums
        .into_iter()
        .map(|(class, (mut sum, count))| {
            sum.iter_mut().for_each(|s| *s /= count as f64);
            if normalize_means {
                let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                sum.iter_mut().for_each(|s| *s /= norm);
            }
            (class, sum)
        })
        .collect();
    Ok(NcmClassifier {
        class_means,
        normalize_means,
    })
}

/// Class with the smallest Euclidean distance; the lowest id wins a tie.
pub fn ncm_predict(classifier: &NcmClassifier, representation: &[f64]) -> Result<ClassId> {
    let mut best: Option<(ClassId, f64)> = None;
    for (&class, mean) in &classifier.class_means {
        if mean.len() != representation.len() {
            return Err(Error::ShapeMismatch(format!(
                "query of dim {} against means of dim {}",
                representation.len(),
                mean.len()
            )));
        }
        let d: f64 = mean.iter().zip(representation).map(|(m, r)| (m - r) * (m - r)).sum();
        // BTreeMap iterates in ascending id order, so strict < keeps the lowest id.
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((class, d));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::UnfittedClassifier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng};

    fn c(v: u32) -> ClassId {
        ClassId(v)
    }

    #[test]
    fn arithmetic_means_and_exact_match() {
        let reps = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let clf = ncm_fit(&reps, &[c(0), c(0), c(1)], false).unwrap();
        assert_eq!(clf.class_means[&c(0)], vec![1.0, 0.0]);
        assert_eq!(clf.class_means[&c(1)], vec![0.0, 1.0]);
        assert_eq!(ncm_predict(&clf, &[1.0, 0.0]).unwrap(), c(0));
    }

    #[test]
    fn single_class_always_predicted() {
        let clf = ncm_fit(&[vec![3.0, -1.0]], &[c(7)], false).unwrap();
        for q in [[0.0, 0.0], [100.0, 5.0], [-3.0, 2.0]] {
            assert_eq!(clf.predict(&q).unwrap(), c(7));
        }
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let clf = ncm_fit(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[c(5), c(2)], false).unwrap();
        assert_eq!(ncm_predict(&clf, &[0.5, 0.5]).unwrap(), c(2));
    }

    #[test]
    fn errors() {
        assert!(matches!(ncm_fit(&[], &[], false), Err(Error::EmptyInput(_))));
        assert!(matches!(
            ncm_fit(&[vec![1.0]], &[c(0), c(1)], false),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            ncm_predict(&NcmClassifier::default(), &[1.0]),
            Err(Error::UnfittedClassifier)
        ));
    }

    #[test]
    fn normalized_means_have_unit_norm() {
        let clf = ncm_fit(&[vec![3.0, 4.0], vec![0.0, 0.0]], &[c(0), c(1)], true).unwrap();
        assert!((clf.class_means[&c(0)][0] - 0.6).abs() < 1e-15);
        assert!(clf.class_means[&c(1)].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn means_match_second_pass_and_predictions_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let dim = 6;
        let reps: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let labels: Vec<ClassId> = (0..300).map(|_| c(rng.random_range(0..7))).collect();
        let clf = ncm_fit(&reps, &labels, false).unwrap();

        // Independent pass: filter each class, then sum and divide.
        for (&class, mean) in &clf.class_means {
            let members: Vec<&Vec<f64>> = reps.iter().zip(&labels).filter(|(_, l)| **l == class).map(|(r, _)| r).collect();
            for d in 0..dim {
                let oracle = members.iter().map(|r| r[d]).sum::<f64>() / members.len() as f64;
                assert!((mean[d] - oracle).abs() < 1e-12);
            }
        }

        for _ in 0..100 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let brute = clf
                .class_means
                .iter()
                .map(|(k, m)| (*k, m.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap()
                .0;
            assert_eq!(ncm_predict(&clf, &q).unwrap(), brute);
        }
    }

    #[test]
    fn fit_is_order_invariant() {
        let reps = vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![-1.0, 1.0], vec![0.5, 0.5]];
        let labels = [c(1), c(0), c(1), c(0)];
        let a = ncm_fit(&reps, &labels, false).unwrap();
        let rev_reps: Vec<Vec<f64>> = reps.iter().rev().cloned().collect();
        let rev_labels: Vec<ClassId> = labels.iter().rev().copied().collect();
        let b = ncm_fit(&rev_reps, &rev_labels, false).unwrap();
        assert_eq!(a, b);
    }
}
