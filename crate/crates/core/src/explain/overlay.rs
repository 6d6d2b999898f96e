use crate::error::{Error, Result};
use crate::image::{quantize, GrayscaleImage, RgbImage};

use super::gradcam::Heatmap;
use super::lime::LimeExplanation;
use super::segment::SegmentMask;

pub const GRADCAM_ALPHA: f64 = 0.4;
pub const LIME_ALPHA: f64 = 0.5;
pub const LIME_TOP_K: usize = 5;

const POSITIVE: [f64; 3] = [0.0, 1.0, 0.0];
const NEGATIVE: [f64; 3] = [1.0, 0.0, 0.0];

/// Jet-like map: blue → cyan → green → yellow → red at 0, ¼, ½, ¾, 1.
pub fn colormap(v: f64) -> [f64; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ];
    let x = v.clamp(0.0, 1.0) * 4.0;
    let i = (x.floor() as usize).min(3);
    let t = x - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn blend(gray: f64, color: [f64; 3], alpha: f64) -> [u8; 3] {
    color.map(|c| quantize((1.0 - alpha) * gray + alpha * c))
}

/// Alpha-blends the colormapped heatmap over the grayscale base.
pub fn render_gradcam(base: &GrayscaleImage, heatmap: &Heatmap, alpha: f64) -> Result<RgbImage> {
    if (base.height(), base.width()) != (heatmap.height(), heatmap.width()) {
        return Err(Error::shape(
            "gradcam overlay",
            &[base.height(), base.width()],
            &[heatmap.height(), heatmap.width()],
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("alpha {alpha} outside [0, 1]")));
    }
    let data = base
        .pixels()
        .iter()
        .zip(heatmap.values())
        .flat_map(|(&g, &h)| blend(g, colormap(h), alpha))
        .collect();
    RgbImage::new(base.height(), base.width(), data)
}

/// Tints the `top_k` segments with the largest nonzero `|weight|`: green
/// for positive weights, red for negative. Other pixels stay gray.
pub fn render_lime(
    base: &GrayscaleImage,
    explanation: &LimeExplanation,
    mask: &SegmentMask,
    top_k: usize,
) -> Result<RgbImage> {
    if (base.height(), base.width()) != (mask.height(), mask.width()) {
        return Err(Error::shape(
            "lime overlay",
            &[base.height(), base.width()],
            &[mask.height(), mask.width()],
        ));
    }
    if explanation.weights.len() != mask.count() {
        return Err(Error::shape("lime overlay", &[explanation.weights.len()], &[mask.count()]));
    }
    let mut tint: Vec<Option<[f64; 3]>> = vec![None; mask.count()];
    for id in explanation
        .ranking()
        .into_iter()
        .filter(|&id| explanation.weights[id] != 0.0)
        .take(top_k)
    {
        tint[id] = Some(if explanation.weights[id] > 0.0 { POSITIVE } else { NEGATIVE });
    }
    let data = base
        .pixels()
        .iter()
        .zip(mask.ids())
        .flat_map(|(&g, &id)| match tint[id] {
            Some(c) => blend(g, c, LIME_ALPHA),
            None => [quantize(g); 3],
        })
        .collect();
    RgbImage::new(base.height(), base.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::segment::{segment, SegmentStrategy};

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(colormap(0.5), [0.0, 1.0, 0.0]);
        assert_eq!(colormap(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(colormap(0.125), [0.0, 0.5, 1.0]);
    }

    #[test]
    fn redness_is_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=100 {
            let c = colormap(i as f64 / 100.0);
            let red = c[0] - c[2];
            assert!(red >= prev);
            prev = red;
        }
    }

    #[test]
    fn zero_heatmap_uniform_tint() {
        let base = GrayscaleImage::blank(8, 8).unwrap();
        let h = Heatmap::new(8, 8, vec![0.0; 64]).unwrap();
        let out = render_gradcam(&base, &h, GRADCAM_ALPHA).unwrap();
        let expected = blend(0.0, colormap(0.0), GRADCAM_ALPHA);
        assert!(out.data().chunks(3).all(|p| p == expected));
    }

    #[test]
    fn lime_changes_only_top_segments() {
        let base = GrayscaleImage::new(8, 8, (0..64).map(|i| i as f64 / 63.0).collect()).unwrap();
        let mask = segment(8, 8, SegmentStrategy::Grid { rows: 4, cols: 4 }).unwrap();
        let mut weights = vec![0.0; 16];
        weights[3] = 0.5;
        weights[9] = -0.8;
        weights[12] = 0.1;
        let e = LimeExplanation {
            weights,
            intercept: 0.0,
            predicted_class: 1,
            kernel_width: 1.0,
            n_samples: 100,
            seed: 0,
            ridge_lambda: 1e-3,
        };
        let out = render_lime(&base, &e, &mask, 2).unwrap();
        let plain = base.to_rgb();
        for p in 0..64 {
            let changed = out.data()[3 * p..3 * p + 3] != plain.data()[3 * p..3 * p + 3];
            let id = mask.ids()[p];
            assert_eq!(changed, id == 3 || id == 9, "pixel {p}");
        }
        // segment 9 is negative → red dominant
        let p = mask.pixels_of(9)[0];
        assert!(out.data()[3 * p] > out.data()[3 * p + 1]);
    }

    #[test]
    fn dimension_mismatch() {
        let base = GrayscaleImage::blank(8, 8).unwrap();
        let h = Heatmap::new(9, 8, vec![0.0; 72]).unwrap();
        assert!(render_gradcam(&base, &h, 0.4).is_err());
    }
}
