use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayscaleImage;
use crate::raster::mask_where;
use crate::seed::stream_rng;

use super::segment::SegmentMask;
use super::ImageClassifier;

/// Perturbed images evaluated per classifier call.
const QUERY_CHUNK: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Kernel width of the sample weighting; `0.25 · √S` when unset.
    pub kernel_width: Option<f64>,
    pub ridge_lambda: f64,
    pub seed: u64,
    /// Intensity written over switched-off segments.
    pub fill: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1000,
            kernel_width: None,
            ridge_lambda: 1e-3,
            seed: 0,
            fill: 0.0,
        }
    }
}

impl LimeConfig {
    pub fn kernel_width_for(&self, segments: usize) -> f64 {
        self.kernel_width.unwrap_or(0.25 * (segments as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimeExplanation {
    /// Surrogate coefficient per segment.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub predicted_class: usize,
    pub kernel_width: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Ridge penalty actually used by the solve.
    pub ridge_lambda: f64,
}

/// One row of the exported explanation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentAttribution {
    pub segment: usize,
    pub weight: f64,
    /// 1-based rank by descending `|weight|`.
    pub rank: usize,
    /// Half-open series index range, for vertical-strip segmentations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_interval: Option<[usize; 2]>,
}

impl LimeExplanation {
    /// Segment ids ordered by descending `|weight|`; ties keep id order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.weights.len()).collect();
        ids.sort_by(|&a, &b| self.weights[b].abs().total_cmp(&self.weights[a].abs()));
        ids
    }

    pub fn attributions(&self, mask: &SegmentMask, series_len: Option<usize>) -> Vec<SegmentAttribution> {
        let mut rank = vec![0; self.weights.len()];
        for (r, id) in self.ranking().into_iter().enumerate() {
            rank[id] = r + 1;
        }
        (0..self.weights.len())
            .map(|id| SegmentAttribution {
                segment: id,
                weight: self.weights[id],
                rank: rank[id],
                time_interval: series_len
                    .and_then(|len| mask.time_interval(id, len))
                    .map(|(a, b)| [a, b]),
            })
            .collect()
    }

    pub fn to_json(&self, mask: &SegmentMask, series_len: Option<usize>) -> serde_json::Value {
        serde_json::json!({
            "predicted_class": self.predicted_class,
            "intercept": self.intercept,
            "kernel_width": self.kernel_width,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "ridge_lambda": self.ridge_lambda,
            "strategy": mask.strategy().to_string(),
            "segments": self.attributions(mask, series_len),
        })
    }
}

/// Weighted ridge regression `y ≈ X β + b` with the intercept `b` left
/// unpenalized. Returns `(β, b, λ used)`. A failed Cholesky factorization
/// is retried once with a larger penalty.
pub fn ridge_regression(x: &[Vec<f64>], y: &[f64], sample_weights: &[f64], lambda: f64) -> Result<(Vec<f64>, f64, f64)> {
    let n = x.len();
    if n == 0 || y.len() != n || sample_weights.len() != n {
        return Err(Error::shape("ridge", &[n], &[y.len(), sample_weights.len()]));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::Input("ragged design matrix".into()));
    }
    let total: f64 = sample_weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Input("sample weights sum to zero".into()));
    }
    let mut x_mean = vec![0.0; p];
    let mut y_mean = 0.0;
    for ((row, &yi), &wi) in x.iter().zip(y).zip(sample_weights) {
        for (m, &v) in x_mean.iter_mut().zip(row) {
            *m += wi * v;
        }
        y_mean += wi * yi;
    }
    x_mean.iter_mut().for_each(|m| *m /= total);
    y_mean /= total;

    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut centered = vec![0.0; p];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(sample_weights) {
        for (c, (&v, &m)) in centered.iter_mut().zip(row.iter().zip(&x_mean)) {
            *c = v - m;
        }
        let yc = yi - y_mean;
        for a in 0..p {
            let wa = wi * centered[a];
            rhs[a] += wa * yc;
            for b in 0..=a {
                gram[(a, b)] += wa * centered[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let solve = |lam: f64| {
        let mut m = gram.clone();
        for d in 0..p {
            m[(d, d)] += lam;
        }
        m.cholesky().map(|c| c.solve(&rhs))
    };
    let (beta, used) = match solve(lambda) {
        Some(b) => (b, lambda),
        None => {
            let retry = lambda.max(1e-6) * 1e3;
            (solve(retry).ok_or(Error::Singular { lambda: retry })?, retry)
        }
    };
    let beta: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok((beta, intercept, used))
}

/// Draws the binary on/off design; row 0 is all ones.
fn sample_design(segments: usize, n_samples: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = stream_rng(seed, "lime");
    let mut rows = Vec::with_capacity(n_samples);
    rows.push(vec![true; segments]);
    for _ in 1..n_samples {
        rows.push((0..segments).map(|_| rng.gen_bool(0.5)).collect());
    }
    rows
}

/// Cosine distance between `z` and the all-ones vector.
fn cosine_distance_to_ones(z: &[bool]) -> f64 {
    let on = z.iter().filter(|&&b| b).count();
    if on == 0 {
        return 1.0;
    }
    1.0 - (on as f64 / z.len() as f64).sqrt()
}

/// LIME on an abstract black box: `f` scores a batch of on/off vectors
/// with the probability of `predicted_class`.
pub fn explain_black_box(
    segments: usize,
    config: &LimeConfig,
    predicted_class: usize,
    f: impl Fn(&[Vec<bool>]) -> Result<Vec<f64>> + Sync,
) -> Result<LimeExplanation> {
    if segments == 0 {
        return Err(Error::Input("no segments to explain".into()));
    }
    if config.n_samples < segments + 2 {
        return Err(Error::Input(format!(
            "n_samples {} must be at least segments + 2 = {}",
            config.n_samples,
            segments + 2
        )));
    }
    let kernel_width = config.kernel_width_for(segments);
    if !(kernel_width > 0.0) {
        return Err(Error::Input(format!("kernel width {kernel_width} must be positive")));
    }
    let design = sample_design(segments, config.n_samples, config.seed);
    let chunks: Vec<Vec<f64>> = design.par_chunks(QUERY_CHUNK).map(&f).collect::<Result<_>>()?;
    let y: Vec<f64> = chunks.into_iter().flatten().collect();
    if y.len() != design.len() {
        return Err(Error::shape("lime scores", &[y.len()], &[design.len()]));
    }
    let weights: Vec<f64> = design
        .iter()
        .map(|z| {
            let d = cosine_distance_to_ones(z);
            (-d * d / (kernel_width * kernel_width)).exp()
        })
        .collect();
    let x: Vec<Vec<f64>> = design
        .iter()
        .map(|z| z.iter().map(|&b| f64::from(u8::from(b))).collect())
        .collect();
    let (coef, intercept, used) = ridge_regression(&x, &y, &weights, config.ridge_lambda)?;
    Ok(LimeExplanation {
        weights: coef,
        intercept,
        predicted_class,
        kernel_width,
        n_samples: config.n_samples,
        seed: config.seed,
        ridge_lambda: used,
    })
}

/// Explains the classifier's predicted class on `image` by switching
/// segments of `mask` off.
pub fn lime_explain(
    classifier: &dyn ImageClassifier,
    image: &GrayscaleImage,
    mask: &SegmentMask,
    config: &LimeConfig,
) -> Result<LimeExplanation> {
    if (image.height(), image.width()) != (mask.height(), mask.width()) {
        return Err(Error::shape(
            "lime",
            &[image.height(), image.width()],
            &[mask.height(), mask.width()],
        ));
    }
    let base = classifier.predict(std::slice::from_ref(image))?;
    let p = base[0];
    let class = usize::from(p[1] > p[0]);
    explain_black_box(mask.count(), config, class, |zs| {
        let images = zs
            .iter()
            .map(|z| {
                let off: Vec<bool> = z.iter().map(|&on| !on).collect();
                mask_where(image, mask, &off, config.fill)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(classifier.predict(&images)?.into_iter().map(|p| p[class]).collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(zs: &[Vec<bool>]) -> Result<Vec<f64>> {
        Ok(zs.iter().map(|z| if z[7] { 1.0 } else { 0.0 }).collect())
    }

    #[test]
    fn planted_segment_recovered() {
        let e = explain_black_box(64, &LimeConfig::default(), 1, planted).unwrap();
        assert_eq!(e.ranking()[0], 7);
        assert!(e.weights[7] > 0.9, "{}", e.weights[7]);
        assert_eq!(e.weights.len(), 64);
    }

    #[test]
    fn constant_box_gives_zero_weights() {
        let e = explain_black_box(16, &LimeConfig::default(), 0, |zs| Ok(vec![0.42; zs.len()])).unwrap();
        assert!(e.weights.iter().all(|w| w.abs() < 1e-9));
        assert!((e.intercept - 0.42).abs() < 1e-9);
    }

    #[test]
    fn seeded_reproducibility() {
        let a = explain_black_box(64, &LimeConfig::default(), 1, planted).unwrap();
        let b = explain_black_box(64, &LimeConfig::default(), 1, planted).unwrap();
        assert_eq!(a, b);
        let c = explain_black_box(64, &LimeConfig { seed: 9, ..LimeConfig::default() }, 1, planted).unwrap();
        assert_ne!(a.weights, c.weights);
        assert_eq!(c.ranking()[0], 7);
    }

    #[test]
    fn too_few_samples() {
        let cfg = LimeConfig {
            n_samples: 65,
            ..LimeConfig::default()
        };
        assert!(explain_black_box(64, &cfg, 0, planted).is_err());
    }

    #[test]
    fn first_sample_is_all_ones() {
        let d = sample_design(5, 10, 3);
        assert!(d[0].iter().all(|&b| b));
        assert_eq!(cosine_distance_to_ones(&d[0]), 0.0);
        assert_eq!(cosine_distance_to_ones(&[false; 4]), 1.0);
        assert!((cosine_distance_to_ones(&[true, false, false, false]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ridge_exact_linear_fit() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 4) as f64, (i / 4) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - 3.0 * r[1] + 0.5).collect();
        let (b, c, lam) = ridge_regression(&x, &y, &[1.0; 20], 0.0).unwrap();
        assert_eq!(lam, 0.0);
        assert!((b[0] - 2.0).abs() < 1e-10 && (b[1] + 3.0).abs() < 1e-10);
        assert!((c - 0.5).abs() < 1e-10);
    }

    #[test]
    fn singular_design_retries_with_larger_penalty() {
        // duplicated column makes the unpenalized Gram matrix singular
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let (b, _, lam) = ridge_regression(&x, &y, &[1.0; 10], 0.0).unwrap();
        assert!(lam > 0.0);
        assert!((b[0] - b[1]).abs() < 1e-9);
    }

    #[test]
    fn image_classifier_path() {
        use crate::explain::segment::{segment, SegmentStrategy};
        let image = GrayscaleImage::new(8, 8, vec![1.0; 64]).unwrap();
        let mask = segment(8, 8, SegmentStrategy::Grid { rows: 2, cols: 2 }).unwrap();
        // class-1 probability is the mean intensity of the top-left tile
        let clf = |img: &GrayscaleImage| {
            let mut s = 0.0;
            for r in 0..4 {
                for c in 0..4 {
                    s += img.get(r, c);
                }
            }
            let p = s / 16.0;
            [1.0 - p * 0.9, p * 0.9]
        };
        let cfg = LimeConfig {
            n_samples: 200,
            ..LimeConfig::default()
        };
        let e = lime_explain(&clf, &image, &mask, &cfg).unwrap();
        assert_eq!(e.predicted_class, 1);
        assert_eq!(e.ranking()[0], 0);
        assert!((e.weights[0] - 0.9).abs() < 1e-2, "{}", e.weights[0]);
        assert!(e.weights[1..].iter().all(|w| w.abs() < 1e-3));
    }
}
