//! View generation: standard stochastic augmentations and the domain-aware
//! augmentations (mixup, cutmix, style) that blend a batch image with a stream image.

mod domain;
mod standard;
mod style;

pub use domain::{dac, dac_with_box, dam, sample_bbox, sample_lambda, sample_lambda_in, BoundingBox, LAMBDA_HIGH, LAMBDA_LOW};
pub use standard::{flip_horizontal, grayscale, standard_augment, StandardParams};
pub use style::{channel_stats_transfer, das, moments, StyleLayer, StyleModel, StylePlan, Styler};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datastream::{ExampleId, StreamBatch};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Counts of each view kind per source image, plus standard-augmentation settings.
///
/// Every source also contributes its raw image, so a source yields
/// `1 + standard_views + dam + dac + das` views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub standard_views: usize,
    pub dam: usize,
    pub dac: usize,
    pub das: usize,
    #[serde(default)]
    pub standard: StandardParams,
    #[serde(default = "default_lambda_low")]
    pub lambda_low: f64,
    #[serde(default = "default_lambda_high")]
    pub lambda_high: f64,
}

fn default_lambda_low() -> f64 {
    LAMBDA_LOW
}

fn default_lambda_high() -> f64 {
    LAMBDA_HIGH
}

impl AugmentationSpec {
    pub fn new(standard_views: usize, dam: usize, dac: usize, das: usize) -> Self {
        Self {
            standard_views,
            dam,
            dac,
            das,
            standard: StandardParams::default(),
            lambda_low: LAMBDA_LOW,
            lambda_high: LAMBDA_HIGH,
        }
    }

    pub fn views_per_source(&self) -> usize {
        1 + self.standard_views + self.dam + self.dac + self.das
    }

    pub fn uses_stream_donors(&self) -> bool {
        self.dam + self.dac + self.das > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.views_per_source() < 2 {
            return Err(Error::InvalidSpec(
                "a contrastive batch needs at least two views per source".into(),
            ));
        }
        if !(LAMBDA_LOW..=LAMBDA_HIGH).contains(&self.lambda_low)
            || !(self.lambda_low..=LAMBDA_HIGH).contains(&self.lambda_high)
        {
            return Err(Error::InvalidSpec(format!(
                "lambda range [{}, {}) must lie within [0.5, 1]",
                self.lambda_low, self.lambda_high
            )));
        }
        Ok(())
    }

    /// View kinds for one source, in batch order.
    pub fn view_kinds(&self) -> Vec<ViewKind> {
        let mut kinds = Vec::with_capacity(self.views_per_source());
        kinds.push(ViewKind::Raw);
        kinds.extend(std::iter::repeat_n(ViewKind::Standard, self.standard_views));
        kinds.extend(std::iter::repeat_n(ViewKind::Dam, self.dam));
        kinds.extend(std::iter::repeat_n(ViewKind::Dac, self.dac));
        kinds.extend(std::iter::repeat_n(ViewKind::Das, self.das));
        kinds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Raw,
    Standard,
    Dam,
    Dac,
    Das,
}

impl ViewKind {
    pub fn is_domain_aware(self) -> bool {
        matches!(self, ViewKind::Dam | ViewKind::Dac | ViewKind::Das)
    }
}

/// A generated view and, for domain-aware kinds, the stream image it borrowed from.
#[derive(Clone, Debug)]
pub struct View {
    pub image: Image,
    pub donor: Option<ExampleId>,
}

/// Builds one view of `x_i`. Domain-aware kinds draw `x_d` uniformly, with
/// replacement, from the current stream batch and a fresh `λ` per call.
pub fn build_view(
    x_i: &Image,
    kind: ViewKind,
    stream_batch: &StreamBatch,
    rng: &mut Rng,
    spec: &AugmentationSpec,
    styler: Option<&Styler>,
) -> Result<View> {
    let donor = if kind.is_domain_aware() {
        if stream_batch.is_empty() {
            return Err(Error::EmptyStreamBatch);
        }
        Some(&stream_batch.examples[rng.random_range(0..stream_batch.len())])
    } else {
        None
    };
    let image = match kind {
        ViewKind::Raw => x_i.clone(),
        ViewKind::Standard => standard_augment(x_i, rng, &spec.standard),
        ViewKind::Dam => {
            let lambda = sample_lambda_in(rng, spec.lambda_low, spec.lambda_high);
            dam(x_i, &donor.expect("donor drawn").image, lambda)?
        }
        ViewKind::Dac => {
            let lambda = sample_lambda_in(rng, spec.lambda_low, spec.lambda_high);
            dac(x_i, &donor.expect("donor drawn").image, lambda, rng)?
        }
        ViewKind::Das => {
            let styler = styler.ok_or_else(|| Error::StyleModel("no style model or fallback configured".into()))?;
            das(x_i, &donor.expect("donor drawn").image, styler)?
        }
    };
    Ok(View {
        image,
        donor: donor.map(|d| d.id),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastream::fixtures::synthetic;
    use crate::rng::{stream_rng, Stream};
    use std::collections::HashMap;

    #[test]
    fn raw_view_is_identity() {
        let data = synthetic(2, 2, 4);
        let batch = StreamBatch::new(data.clone());
        let mut rng = stream_rng(0, Stream::Augmentation);
        let v = build_view(&data[0].image, ViewKind::Raw, &batch, &mut rng, &AugmentationSpec::new(1, 0, 0, 0), None).unwrap();
        assert_eq!(&v.image, data[0].image.as_ref());
        assert!(v.donor.is_none());
    }

    #[test]
    fn singleton_stream_batch_forces_donor() {
        let data = synthetic(2, 2, 4);
        let batch = StreamBatch::new(vec![data[3].clone()]);
        let mut rng = stream_rng(1, Stream::Augmentation);
        let spec = AugmentationSpec::new(0, 1, 0, 0);
        for _ in 0..10 {
            let v = build_view(&data[0].image, ViewKind::Dam, &batch, &mut rng, &spec, None).unwrap();
            assert_eq!(v.donor, Some(data[3].id));
        }
    }

    #[test]
    fn empty_stream_batch_rejected_for_daa() {
        let data = synthetic(1, 1, 4);
        let mut rng = stream_rng(2, Stream::Augmentation);
        let spec = AugmentationSpec::new(0, 0, 1, 0);
        let err = build_view(&data[0].image, ViewKind::Dac, &StreamBatch::new(vec![]), &mut rng, &spec, None);
        assert!(matches!(err, Err(Error::EmptyStreamBatch)));
    }

    #[test]
    fn donor_selection_is_uniform() {
        let data = synthetic(10, 1, 4);
        let batch = StreamBatch::new(data.clone());
        let mut rng = stream_rng(3, Stream::Augmentation);
        let spec = AugmentationSpec::new(0, 0, 1, 0);
        let trials = 1_000;
        let mut counts: HashMap<ExampleId, usize> = HashMap::new();
        for _ in 0..trials {
            let v = build_view(&data[0].image, ViewKind::Dac, &batch, &mut rng, &spec, None).unwrap();
            *counts.entry(v.donor.unwrap()).or_default() += 1;
        }
        let p = 0.1;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for e in &data {
            let c = counts.get(&e.id).copied().unwrap_or(0) as f64;
            assert!((c - trials as f64 * p).abs() <= 3.0 * sigma, "{:?}: {c}", e.id);
        }
    }

    #[test]
    fn donor_selection_passes_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let data = synthetic(10, 1, 2);
        let batch = StreamBatch::new(data.clone());
        let mut rng = stream_rng(7, Stream::Augmentation);
        let spec = AugmentationSpec::new(0, 1, 0, 0);
        let trials = 100_000;
        let mut counts: HashMap<ExampleId, usize> = HashMap::new();
        for _ in 0..trials {
            let v = build_view(&data[0].image, ViewKind::Dam, &batch, &mut rng, &spec, None).unwrap();
            *counts.entry(v.donor.unwrap()).or_default() += 1;
        }
        let expected = trials as f64 / 10.0;
        let stat: f64 = data
            .iter()
            .map(|e| (counts.get(&e.id).copied().unwrap_or(0) as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
        assert!(p > 0.001, "chi-square {stat}, p = {p}");
    }

    #[test]
    fn view_kinds_order_and_count() {
        let spec = AugmentationSpec::new(4, 1, 1, 1);
        assert_eq!(spec.views_per_source(), 8);
        assert_eq!(
            spec.view_kinds(),
            vec![
                ViewKind::Raw,
                ViewKind::Standard,
                ViewKind::Standard,
                ViewKind::Standard,
                ViewKind::Standard,
                ViewKind::Dam,
                ViewKind::Dac,
                ViewKind::Das
            ]
        );
        assert!(AugmentationSpec::new(0, 0, 0, 0).validate().is_err());
    }

    #[test]
    fn all_kinds_preserve_shape_and_range() {
        let data = synthetic(3, 3, 8);
        let batch = StreamBatch::new(data.clone());
        let mut rng = stream_rng(4, Stream::Augmentation);
        let spec = AugmentationSpec::new(1, 1, 1, 1);
        for kind in spec.view_kinds() {
            for ex in &data {
                let v = build_view(&ex.image, kind, &batch, &mut rng, &spec, Some(&Styler::ChannelStats)).unwrap();
                assert_eq!(v.image.shape(), ex.image.shape());
                assert!(v.image.in_unit_range());
            }
        }
    }
}
