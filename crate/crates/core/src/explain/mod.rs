//! Grad-CAM heatmaps and LIME segment attributions for image classifiers,
//! their overlays, and a deletion-curve fidelity score.

mod fidelity;
mod gradcam;
mod lime;
mod overlay;
pub mod segment;

pub use fidelity::{deletion_auc, deletion_curve, importance_order, segment_scores, DeletionCurve};
pub use gradcam::{gradcam, gradcam_for_model, raw_cam, upsample_bilinear, Heatmap};
pub use lime::{explain_black_box, lime_explain, ridge_regression, LimeConfig, LimeExplanation, SegmentAttribution};
pub use overlay::{colormap, render_gradcam, render_lime, GRADCAM_ALPHA, LIME_ALPHA, LIME_TOP_K};
pub use segment::{segment, SegmentMask, SegmentStrategy};

use crate::error::{Error, Result};
use crate::image::GrayscaleImage;
use crate::models::{image_batch, series_batch, Batch, Model};

/// Anything that maps plot images to class probabilities.
pub trait ImageClassifier: Sync {
    /// `[p0, p1]` per image, in input order.
    fn predict(&self, images: &[GrayscaleImage]) -> Result<Vec<[f64; 2]>>;
}

impl<F> ImageClassifier for F
where
    F: Fn(&GrayscaleImage) -> [f64; 2] + Sync,
{
    fn predict(&self, images: &[GrayscaleImage]) -> Result<Vec<[f64; 2]>> {
        Ok(images.iter().map(self).collect())
    }
}

/// A student or fusion model viewed as an image classifier. Fusion models
/// keep the series branch fixed at `series`.
#[derive(Clone, Copy, Debug)]
pub struct ModelClassifier<'a> {
    model: &'a Model,
    series: Option<&'a [f64]>,
}

impl<'a> ModelClassifier<'a> {
    pub fn new(model: &'a Model, series: Option<&'a [f64]>) -> Result<Self> {
        if !model.needs_image() {
            return Err(Error::NoImageBranch);
        }
        if model.needs_series() && series.is_none() {
            return Err(Error::Input("fusion model needs the series for explanation".into()));
        }
        Ok(ModelClassifier {
            model,
            series: series.filter(|_| model.needs_series()),
        })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn series(&self) -> Option<&[f64]> {
        self.series
    }
}

impl ImageClassifier for ModelClassifier<'_> {
    fn predict(&self, images: &[GrayscaleImage]) -> Result<Vec<[f64; 2]>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&GrayscaleImage> = images.iter().collect();
        let series = match self.series {
            Some(s) => Some(series_batch(&vec![s; images.len()])?),
            None => None,
        };
        let probs = self.model.predict_proba(&Batch {
            series,
            images: Some(image_batch(&refs)?),
        })?;
        Ok((0..images.len()).map(|r| [probs.row(r)[0], probs.row(r)[1]]).collect())
    }
}
