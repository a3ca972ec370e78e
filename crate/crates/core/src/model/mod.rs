//! Encoder (feature extractor plus projection head) and the nearest-class-mean classifier.

mod encoder;
mod layers;
mod ncm;

pub use encoder::{Architecture, ArchitectureDescriptor, EncoderModel, PROJECTION_DIM, PROJECTION_HIDDEN};
pub use layers::Mode;
pub use ncm::{ncm_fit, ncm_predict, NcmClassifier};

use crate::error::Result;
use crate::image::Image;

/// Anything that maps images to representation vectors.
pub trait FeatureExtractor {
    fn extract(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>>;
}

impl FeatureExtractor for EncoderModel {
    fn extract(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .encode(images)?
            .into_iter()
            .map(|r| r.into_iter().map(f64::from).collect())
            .collect())
    }
}
