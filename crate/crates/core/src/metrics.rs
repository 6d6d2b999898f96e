//! Binary classification metrics: confusion matrix, per-class precision,
//! recall and F1, and accuracy.

use serde::Serialize;

use crate::dataset::TimeSeriesRecord;
use crate::error::{Error, Result};
use crate::models::{image_batch, series_batch, Batch, Model};
use crate::raster::{rasterize, PlotConfig};
use crate::tensor::Tensor;

/// How probabilities become a predicted class.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Decision {
    #[default]
    Argmax,
    /// Class 1 iff `p[1] >= threshold`.
    Threshold(f64),
}

impl Decision {
    pub fn apply(self, p: &[f64]) -> usize {
        match self {
            Decision::Argmax => usize::from(p[1] > p[0]),
            Decision::Threshold(t) => usize::from(p[1] >= t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; 2]; 2],
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub accuracy: f64,
    pub support: [u64; 2],
    /// Set where a precision denominator was zero (metric reported as 0).
    pub precision_zero_division: [bool; 2],
    /// Set where a recall denominator was zero (metric reported as 0).
    pub recall_zero_division: [bool; 2],
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: [[u64; 2]; 2]) -> Result<Self> {
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Input("no samples to evaluate".into()));
        }
        let mut precision = [0.0; 2];
        let mut recall = [0.0; 2];
        let mut f1 = [0.0; 2];
        let mut pz = [false; 2];
        let mut rz = [false; 2];
        let mut support = [0; 2];
        for c in 0..2 {
            let tp = confusion[c][c];
            let predicted = confusion[0][c] + confusion[1][c];
            support[c] = confusion[c][0] + confusion[c][1];
            (precision[c], pz[c]) = ratio(tp, predicted);
            (recall[c], rz[c]) = ratio(tp, support[c]);
            let s = precision[c] + recall[c];
            f1[c] = if s == 0.0 { 0.0 } else { 2.0 * precision[c] * recall[c] / s };
        }
        Ok(EvalReport {
            confusion,
            precision,
            recall,
            f1,
            accuracy: (confusion[0][0] + confusion[1][1]) as f64 / total as f64,
            support,
            precision_zero_division: pz,
            recall_zero_division: rz,
        })
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::shape("evaluate", &[labels.len()], &[predictions.len()]));
        }
        let mut confusion = [[0u64; 2]; 2];
        for (&l, &p) in labels.iter().zip(predictions) {
            if l > 1 || p > 1 {
                return Err(Error::Index(format!("class pair ({l}, {p}) outside {{0, 1}}")));
            }
            confusion[l][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub const CSV_HEADER: &'static str = "precision_0,precision_1,f1_0,accuracy,recall_0,recall_1,f1_1,\
support_0,support_1,true0_pred0,true0_pred1,true1_pred0,true1_pred1";

    /// Values in [`Self::CSV_HEADER`] order.
    pub fn csv_row(&self) -> String {
        let c = &self.confusion;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.precision[0],
            self.precision[1],
            self.f1[0],
            self.accuracy,
            self.recall[0],
            self.recall[1],
            self.f1[1],
            self.support[0],
            self.support[1],
            c[0][0],
            c[0][1],
            c[1][0],
            c[1][1]
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    /// Four-row summary in the layout of the results table.
    pub fn table(&self, title: &str) -> String {
        format!(
            "{title}\n  Precision (Class 0)  {:.2}\n  Precision (Class 1)  {:.2}\n  F1-Score (Class 0)   {:.2}\n  Accuracy             {:.2}\n",
            self.precision[0], self.precision[1], self.f1[0], self.accuracy
        )
    }
}

/// Builds the inputs `model` needs for `records`.
pub fn batch_for(model: &Model, records: &[TimeSeriesRecord], plot: &PlotConfig) -> Result<Batch> {
    let series = if model.needs_series() {
        let refs: Vec<&[f64]> = records.iter().map(|r| r.values.as_slice()).collect();
        Some(series_batch(&refs)?)
    } else {
        None
    };
    let images = if model.needs_image() {
        let imgs = records
            .iter()
            .map(|r| rasterize(&r.values, plot))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = imgs.iter().collect();
        Some(image_batch(&refs)?)
    } else {
        None
    };
    Ok(Batch { series, images })
}

pub fn predictions(probs: &Tensor, decision: Decision) -> Vec<usize> {
    (0..probs.shape()[0]).map(|r| decision.apply(probs.row(r))).collect()
}

/// Evaluates `model` on an already assembled batch.
pub fn evaluate_batch(model: &Model, batch: &Batch, labels: &[usize], decision: Decision) -> Result<EvalReport> {
    if batch.is_empty() {
        return Err(Error::Input("no samples to evaluate".into()));
    }
    let probs = model.predict_proba(batch)?;
    EvalReport::from_predictions(labels, &predictions(&probs, decision))
}

/// Rasterizes as needed and evaluates `model` on `records`.
pub fn evaluate(
    model: &Model,
    records: &[TimeSeriesRecord],
    plot: &PlotConfig,
    decision: Decision,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Input("no samples to evaluate".into()));
    }
    let batch = batch_for(model, records, plot)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    evaluate_batch(model, &batch, &labels, decision)
}
