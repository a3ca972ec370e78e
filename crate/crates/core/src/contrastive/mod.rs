//! Many-view batches and the multi-view contrastive loss.

mod loss;

pub use loss::{
    mvcont_loss, mvcont_loss_unchecked, positive_sets, EmbeddingBatch, LossAndGradient, NORM_TOLERANCE,
};

use crate::augmentation::{build_view, AugmentationSpec, Styler, ViewKind};
use crate::datastream::{ExampleId, LabeledExample, StreamBatch};
use crate::error::Result;
use crate::image::Image;
use crate::rng::Rng;

/// All views of a combined batch. Views of one source are contiguous:
/// raw, standard views, then DAM, DAC and DAS views.
#[derive(Clone, Debug)]
pub struct ManyViewBatch {
    pub images: Vec<Image>,
    pub source_ids: Vec<ExampleId>,
    pub view_kinds: Vec<ViewKind>,
}

impl ManyViewBatch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Every domain-aware view is tagged with the id of the batch image it was
/// built from, never the stream donor's.
pub fn build_many_view_batch(
    batch: &[LabeledExample],
    spec: &AugmentationSpec,
    stream_batch: &StreamBatch,
    rng: &mut Rng,
    styler: Option<&Styler>,
) -> Result<ManyViewBatch> {
    spec.validate()?;
    let kinds = spec.view_kinds();
    let total = batch.len() * kinds.len();
    let mut out = ManyViewBatch {
        images: Vec::with_capacity(total),
        source_ids: Vec::with_capacity(total),
        view_kinds: Vec::with_capacity(total),
    };
    for example in batch {
        for &kind in &kinds {
            let view = build_view(&example.image, kind, stream_batch, rng, spec, styler)?;
            out.images.push(view.image);
            out.source_ids.push(example.id);
            out.view_kinds.push(kind);
        }
    }
    Ok(out)
}
