//! Time series to grayscale line-plot conversion.
//!
//! The plot has no axes, ticks or labels: index `0..L-1` maps linearly onto
//! columns `[margin, width-1-margin]` and the value range onto rows
//! `[height-1-margin, margin]`, so larger values sit higher. Consecutive
//! points are joined by a one-pixel polyline. Coverage is computed on a
//! 1/256-pixel fixed-point grid with integer arithmetic, which keeps the
//! output bitwise identical across runs and platforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::segment::SegmentMask;
use crate::image::{GrayscaleImage, MIN_SIDE};

const SUBPIXEL: i64 = 256;

/// Vertical scaling of plotted values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ValueRange {
    /// Each series fills the full vertical extent.
    #[default]
    PerSeries,
    /// Fixed dataset-wide bounds; values outside are clamped.
    Global { min: f64, max: f64 },
}

impl ValueRange {
    /// Global bounds spanning every value of every series.
    pub fn global_from<'a>(series: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in series {
            for &v in s {
                min = min.min(v);
                max = max.max(v);
            }
        }
        ValueRange::Global { min, max }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub width: usize,
    pub height: usize,
    pub margin: usize,
    pub value_range: ValueRange,
    pub antialias: bool,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            width: 224,
            height: 224,
            margin: 2,
            value_range: ValueRange::PerSeries,
            antialias: true,
        }
    }
}

impl PlotConfig {
    pub fn with_size(height: usize, width: usize) -> Self {
        PlotConfig {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_SIDE || self.height < MIN_SIDE {
            return Err(Error::Input(format!(
                "plot {}x{} is smaller than {MIN_SIDE}x{MIN_SIDE}",
                self.height, self.width
            )));
        }
        if 4 * self.margin >= self.width.min(self.height) {
            return Err(Error::Input(format!(
                "margin {} must be below a quarter of the shorter side",
                self.margin
            )));
        }
        if let ValueRange::Global { min, max } = self.value_range {
            if !(min.is_finite() && max.is_finite() && min <= max) {
                return Err(Error::Input(format!("invalid global value range [{min}, {max}]")));
            }
        }
        Ok(())
    }
}

/// Canvas coordinates `(x, y)` of every point of `values`.
///
/// A series with zero value range is laid out on the midline row
/// `(height - 1) / 2` (integer division).
pub fn layout(values: &[f64], config: &PlotConfig) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    if values.len() < 2 {
        return Err(Error::Input(format!("series of length {} cannot be plotted", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("series contains non-finite values".into()));
    }
    let (lo, hi) = match config.value_range {
        ValueRange::PerSeries => values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
        ValueRange::Global { min, max } => (min, max),
    };
    let m = config.margin as f64;
    let x_span = (config.width - 1 - 2 * config.margin) as f64;
    let y_span = (config.height - 1 - 2 * config.margin) as f64;
    let last = (values.len() - 1) as f64;
    let midline = ((config.height - 1) / 2) as f64;
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let x = m + i as f64 * x_span / last;
            let y = if hi > lo {
                m + (hi - v.clamp(lo, hi)) / (hi - lo) * y_span
            } else {
                midline
            };
            (x, y)
        })
        .collect())
}

fn to_fixed(v: f64) -> i64 {
    (v * SUBPIXEL as f64).round() as i64
}

/// `round(n / d)` for `d > 0`, halves rounded up.
fn round_div(n: i64, d: i64) -> i64 {
    (2 * n + d).div_euclid(2 * d)
}

struct Coverage {
    width: usize,
    height: usize,
    cells: Vec<u16>,
}

impl Coverage {
    fn plot(&mut self, col: i64, row: i64, amount: i64) {
        if amount <= 0 || col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            return;
        }
        let cell = &mut self.cells[row as usize * self.width + col as usize];
        *cell = (*cell).max(amount as u16);
    }

    /// Steps along the major axis at every integer pixel centre between the
    /// two fixed-point endpoints and splits coverage between the two
    /// straddled minor-axis pixels.
    fn segment(&mut self, a: (i64, i64), b: (i64, i64), antialias: bool) {
        let x_major = (b.0 - a.0).abs() >= (b.1 - a.1).abs();
        // (major, minor) coordinates
        let (mut p, mut q) = if x_major { (a, b) } else { ((a.1, a.0), (b.1, b.0)) };
        if p.0 > q.0 {
            std::mem::swap(&mut p, &mut q);
        }
        let first = p.0.div_euclid(SUBPIXEL) + i64::from(p.0.rem_euclid(SUBPIXEL) != 0);
        let last = q.0.div_euclid(SUBPIXEL);
        for major in first..=last {
            let pos = major * SUBPIXEL;
            let minor = if q.0 == p.0 {
                p.1
            } else {
                p.1 + round_div((pos - p.0) * (q.1 - p.1), q.0 - p.0)
            };
            let cells: [(i64, i64); 2] = if antialias {
                let base = minor.div_euclid(SUBPIXEL);
                let frac = minor.rem_euclid(SUBPIXEL);
                [(base, SUBPIXEL - frac), (base + 1, frac)]
            } else {
                [((minor + SUBPIXEL / 2).div_euclid(SUBPIXEL), SUBPIXEL), (0, 0)]
            };
            for (m, amount) in cells {
                if x_major {
                    self.plot(major, m, amount);
                } else {
                    self.plot(m, major, amount);
                }
            }
        }
    }
}

/// Rasterizes `values` as a line plot.
pub fn rasterize(values: &[f64], config: &PlotConfig) -> Result<GrayscaleImage> {
    let points = layout(values, config)?;
    let mut cov = Coverage {
        width: config.width,
        height: config.height,
        cells: vec![0; config.width * config.height],
    };
    let fixed: Vec<(i64, i64)> = points.iter().map(|&(x, y)| (to_fixed(x), to_fixed(y))).collect();
    for pair in fixed.windows(2) {
        cov.segment(pair[0], pair[1], config.antialias);
    }
    let pixels = cov
        .cells
        .iter()
        .map(|&c| f64::from(c) / SUBPIXEL as f64)
        .collect();
    GrayscaleImage::new(config.height, config.width, pixels)
}

/// Replaces every pixel whose segment id is in `segments_off` with `fill`.
pub fn mask_segments(
    image: &GrayscaleImage,
    mask: &SegmentMask,
    segments_off: &[usize],
    fill: f64,
) -> Result<GrayscaleImage> {
    let mut off = vec![false; mask.count()];
    for &s in segments_off {
        if s >= mask.count() {
            return Err(Error::Index(format!("segment {s} of {}", mask.count())));
        }
        off[s] = true;
    }
    mask_where(image, mask, &off, fill)
}

/// Like [`mask_segments`] with a per-segment on/off flag vector.
pub fn mask_where(image: &GrayscaleImage, mask: &SegmentMask, off: &[bool], fill: f64) -> Result<GrayscaleImage> {
    if (image.height(), image.width()) != (mask.height(), mask.width()) {
        return Err(Error::shape(
            "mask_segments",
            &[image.height(), image.width()],
            &[mask.height(), mask.width()],
        ));
    }
    if off.len() != mask.count() {
        return Err(Error::shape("mask_segments", &[off.len()], &[mask.count()]));
    }
    if !(0.0..=1.0).contains(&fill) {
        return Err(Error::Input(format!("fill {fill} outside [0, 1]")));
    }
    let mut out = image.clone();
    for (p, &id) in out.pixels_mut().iter_mut().zip(mask.ids()) {
        if off[id] {
            *p = fill;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::segment::{segment, SegmentStrategy};

    fn full_pixels(img: &GrayscaleImage) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..img.height() {
            for c in 0..img.width() {
                if img.get(r, c) == 1.0 {
                    out.push((r, c));
                }
            }
        }
        out
    }

    #[test]
    fn constant_series_is_a_midline_run() {
        let img = rasterize(&[5.0; 100], &PlotConfig::default()).unwrap();
        let full = full_pixels(&img);
        let expected: Vec<(usize, usize)> = (2..=221).map(|c| (111, c)).collect();
        assert_eq!(full, expected);
        assert_eq!(img.pixels().iter().filter(|&&v| v > 0.0).count(), expected.len());
    }

    #[test]
    fn two_point_line_is_the_diagonal() {
        let cfg = PlotConfig {
            width: 8,
            height: 8,
            margin: 0,
            value_range: ValueRange::PerSeries,
            antialias: false,
        };
        let img = rasterize(&[0.0, 1.0], &cfg).unwrap();
        let expected: Vec<(usize, usize)> = (0..8).map(|c| (7 - c, c)).rev().collect();
        assert_eq!(full_pixels(&img), expected);
        assert_eq!(img.pixels().iter().filter(|&&v| v > 0.0).count(), 8);
    }

    #[test]
    fn short_series_rejected() {
        assert!(rasterize(&[1.0], &PlotConfig::default()).is_err());
        assert!(rasterize(&[1.0, f64::NAN], &PlotConfig::default()).is_err());
    }

    #[test]
    fn margin_must_be_small() {
        let cfg = PlotConfig {
            margin: 4,
            ..PlotConfig::with_size(16, 16)
        };
        assert!(rasterize(&[0.0, 1.0], &cfg).is_err());
    }

    #[test]
    fn antialiased_pixels_stay_in_unit_range() {
        let series: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let img = rasterize(&series, &PlotConfig::default()).unwrap();
        assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        // every column in the plotting area is lit
        for c in 2..=221 {
            assert!((0..224).any(|r| img.get(r, c) > 0.0), "column {c} empty");
        }
    }

    #[test]
    fn masking_identity_and_full() {
        let img = rasterize(&[0.0, 1.0, 0.5, 2.0], &PlotConfig::with_size(16, 16)).unwrap();
        let mask = segment(16, 16, SegmentStrategy::Grid { rows: 2, cols: 2 }).unwrap();
        assert_eq!(mask_segments(&img, &mask, &[], 0.0).unwrap(), img);
        let blank = mask_segments(&img, &mask, &[0, 1, 2, 3], 0.0).unwrap();
        assert!(blank.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masking_changes_exactly_one_segment() {
        let img = GrayscaleImage::new(16, 16, vec![1.0; 256]).unwrap();
        let mask = segment(16, 16, SegmentStrategy::Grid { rows: 4, cols: 4 }).unwrap();
        for s in 0..16 {
            let out = mask_segments(&img, &mask, &[s], 0.0).unwrap();
            let changed: Vec<usize> = (0..256).filter(|&i| out.pixels()[i] != img.pixels()[i]).collect();
            assert_eq!(changed, mask.pixels_of(s));
        }
    }

    #[test]
    fn masking_dimension_mismatch() {
        let img = GrayscaleImage::blank(16, 16).unwrap();
        let mask = segment(8, 8, SegmentStrategy::Vstrip { n: 2 }).unwrap();
        assert!(mask_segments(&img, &mask, &[0], 0.0).is_err());
    }
}
