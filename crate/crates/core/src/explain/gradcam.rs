use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::GrayscaleImage;
use crate::models::{ForwardTrace, Model};
use crate::tensor::Tensor;

/// Row-major map of importances in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(Error::shape("heatmap", &[height, width], &[values.len()]));
        }
        Ok(Heatmap { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Min-max scaling to `[0, 1]`. A map with no spread becomes all zeros
    /// when its maximum is zero and all ones otherwise.
    pub fn normalized(&self) -> Heatmap {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        let values = if range > 0.0 {
            self.values.iter().map(|v| (v - min) / range).collect()
        } else {
            vec![if max > 0.0 { 1.0 } else { 0.0 }; self.values.len()]
        };
        Heatmap { values, ..*self }
    }

    /// Index of the first maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// `ReLU(Σ_k w_k · A_k)` with `w_k` the spatial mean of `gradients_k`.
/// Both tensors are `C×H×W`; the result is not normalized.
pub fn raw_cam(activations: &Tensor, gradients: &Tensor) -> Result<Heatmap> {
    if activations.rank() != 3 || activations.shape() != gradients.shape() {
        return Err(Error::shape("gradcam", activations.shape(), gradients.shape()));
    }
    let (c, h, w) = (activations.shape()[0], activations.shape()[1], activations.shape()[2]);
    let plane = h * w;
    let mut map = vec![0.0; plane];
    for k in 0..c {
        let g = &gradients.data()[k * plane..(k + 1) * plane];
        let weight = g.iter().sum::<f64>() / plane as f64;
        let a = &activations.data()[k * plane..(k + 1) * plane];
        for (m, &v) in map.iter_mut().zip(a) {
            *m += weight * v;
        }
    }
    for m in &mut map {
        *m = m.max(0.0);
    }
    Heatmap::new(h, w, map)
}

/// Bilinear resize with half-pixel centers: output pixel `i` samples the
/// input at `(i + 0.5) · in / out − 0.5`, clamped to the border.
pub fn upsample_bilinear(map: &Heatmap, height: usize, width: usize) -> Result<Heatmap> {
    if height == 0 || width == 0 {
        return Err(Error::Input("upsample target must be non-empty".into()));
    }
    let axis = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(input - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = axis(height, map.height);
    let cols = axis(width, map.width);
    let mut values = Vec::with_capacity(height * width);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = map.get(r0, c0) * (1.0 - fc) + map.get(r0, c1) * fc;
            let bottom = map.get(r1, c0) * (1.0 - fc) + map.get(r1, c1) * fc;
            values.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Heatmap::new(height, width, values)
}

/// Grad-CAM for `class`, resized to `height×width` and normalized.
/// Consumes the trace's single gradient query.
pub fn gradcam(trace: &mut ForwardTrace, class: usize, height: usize, width: usize) -> Result<Heatmap> {
    let gradients = trace.class_gradient(class)?;
    let cam = raw_cam(&trace.last_conv_activations(), &gradients)?;
    Ok(upsample_bilinear(&cam, height, width)?.normalized())
}

/// Traces `model` on one image and explains `class` (the predicted class
/// when `None`). Returns the heatmap and the explained class.
pub fn gradcam_for_model(
    model: &Model,
    series: Option<&[f64]>,
    image: &GrayscaleImage,
    class: Option<usize>,
) -> Result<(Heatmap, usize)> {
    let mut trace = model.trace(series, image)?;
    let class = class.unwrap_or_else(|| trace.predicted_class());
    let map = gradcam(&mut trace, class, image.height(), image.width())?;
    Ok((map, class))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_map_stays_zero() {
        let acts = Tensor::full(&[2, 3, 3], 1.0);
        let grads = Tensor::zeros(&[2, 3, 3]);
        let cam = raw_cam(&acts, &grads).unwrap();
        let up = upsample_bilinear(&cam, 8, 8).unwrap().normalized();
        assert!(up.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_closed_form() {
        let a: Vec<f64> = vec![0.0, 2.0, 1.0, 3.0];
        let acts = Tensor::new(vec![1, 2, 2], a.clone()).unwrap();
        let grads = Tensor::full(&[1, 2, 2], 0.5);
        let cam = raw_cam(&acts, &grads).unwrap();
        for (c, v) in cam.values().iter().zip(&a) {
            assert_eq!(*c, 0.5 * v);
        }
        assert_eq!(cam.normalized().values(), &[0.0, 2.0 / 3.0, 1.0 / 3.0, 1.0]);
    }

    #[test]
    fn negative_weights_are_clipped() {
        let acts = Tensor::full(&[1, 2, 2], 1.0);
        let grads = Tensor::full(&[1, 2, 2], -1.0);
        assert!(raw_cam(&acts, &grads).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_identity_and_constant() {
        let m = Heatmap::new(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(upsample_bilinear(&m, 2, 3).unwrap(), m);
        let c = Heatmap::new(2, 2, vec![0.7; 4]).unwrap();
        assert!(upsample_bilinear(&c, 5, 7).unwrap().values().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn upsample_doubling_weights() {
        // 1-D slice: [0, 1] → 4 samples at src −0.25, 0.25, 0.75, 1.25 → clamp
        let m = Heatmap::new(1, 2, vec![0.0, 1.0]).unwrap();
        let up = upsample_bilinear(&m, 1, 4).unwrap();
        assert_eq!(up.values(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(raw_cam(&Tensor::zeros(&[1, 2, 2]), &Tensor::zeros(&[1, 2, 3])).is_err());
    }
}
