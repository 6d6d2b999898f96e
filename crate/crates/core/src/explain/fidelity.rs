use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::GrayscaleImage;
use crate::raster::mask_where;

use super::gradcam::Heatmap;
use super::segment::SegmentMask;
use super::ImageClassifier;

/// Probability of the explained class after deleting the first `k`
/// segments of an ordering, for `k = 0..=S`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeletionCurve {
    pub class: usize,
    pub order: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl DeletionCurve {
    /// Trapezoidal area with the deleted fraction on the x axis.
    pub fn auc(&self) -> f64 {
        let steps = self.probabilities.len() - 1;
        if steps == 0 {
            return self.probabilities[0];
        }
        let h = 1.0 / steps as f64;
        self.probabilities.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum()
    }
}

/// Segment ids by descending score; ties keep id order.
pub fn importance_order(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    ids
}

/// Mean heatmap value inside each segment.
pub fn segment_scores(heatmap: &Heatmap, mask: &SegmentMask) -> Result<Vec<f64>> {
    if (heatmap.height(), heatmap.width()) != (mask.height(), mask.width()) {
        return Err(Error::shape(
            "segment scores",
            &[heatmap.height(), heatmap.width()],
            &[mask.height(), mask.width()],
        ));
    }
    let mut sum = vec![0.0; mask.count()];
    let mut count = vec![0usize; mask.count()];
    for (&v, &id) in heatmap.values().iter().zip(mask.ids()) {
        sum[id] += v;
        count[id] += 1;
    }
    Ok(sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect())
}

/// Deletes segments cumulatively in `order`, filling them with `fill`.
pub fn deletion_curve(
    classifier: &dyn ImageClassifier,
    image: &GrayscaleImage,
    mask: &SegmentMask,
    order: &[usize],
    class: usize,
    fill: f64,
) -> Result<DeletionCurve> {
    let s = mask.count();
    let mut seen = vec![false; s];
    for &id in order {
        if id >= s || std::mem::replace(&mut seen[id], true) {
            return Err(Error::Input(format!("deletion order is not a permutation of 0..{s}")));
        }
    }
    if order.len() != s {
        return Err(Error::Input(format!("deletion order is not a permutation of 0..{s}")));
    }
    if class > 1 {
        return Err(Error::Index(format!("class {class} of 2")));
    }
    let mut off = vec![false; s];
    let mut images = vec![mask_where(image, mask, &off, fill)?];
    for &id in order {
        off[id] = true;
        images.push(mask_where(image, mask, &off, fill)?);
    }
    let probabilities = classifier.predict(&images)?.into_iter().map(|p| p[class]).collect();
    Ok(DeletionCurve {
        class,
        order: order.to_vec(),
        probabilities,
    })
}

/// Deletion AUC for per-segment `scores` (higher = more important);
/// lower values indicate a more faithful explanation.
pub fn deletion_auc(
    classifier: &dyn ImageClassifier,
    image: &GrayscaleImage,
    mask: &SegmentMask,
    scores: &[f64],
    class: usize,
) -> Result<f64> {
    if scores.len() != mask.count() {
        return Err(Error::shape("deletion", &[scores.len()], &[mask.count()]));
    }
    Ok(deletion_curve(classifier, image, mask, &importance_order(scores), class, 0.0)?.auc())
}
