use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Decision, EvalReport};
use crate::raster::PlotConfig;

use super::{train, TrainConfig, TrainMode, TrainOutcome, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MetricSummary { mean, std }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkReport {
    pub mode: TrainMode,
    pub seeds: Vec<u64>,
    pub runs: Vec<EvalReport>,
    pub training: Vec<TrainReport>,
    pub accuracy: MetricSummary,
    pub precision: [MetricSummary; 2],
    pub recall: [MetricSummary; 2],
    pub f1: [MetricSummary; 2],
    pub seconds: MetricSummary,
    pub stopping_epoch: MetricSummary,
    pub train_set_mb: f64,
}

/// Trains and tests once per seed in `seeds` and aggregates test metrics.
pub fn run_seeded_benchmark(
    config: &TrainConfig,
    data: &DatasetSplit,
    plot: &PlotConfig,
    seeds: &[u64],
) -> Result<BenchmarkReport> {
    if seeds.is_empty() {
        return Err(Error::Input("benchmark needs at least one seed".into()));
    }
    let results: Vec<(EvalReport, TrainReport)> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            let out = train(&cfg, data, plot, None)?;
            let eval = evaluate(&out.model, &data.test, plot, Decision::Argmax)?;
            Ok((eval, out.report))
        })
        .collect::<Result<_>>()?;
    let (runs, training): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let pick = |f: &dyn Fn(&EvalReport) -> f64| MetricSummary::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(BenchmarkReport {
        mode: config.mode,
        seeds: seeds.to_vec(),
        accuracy: pick(&|r| r.accuracy),
        precision: [pick(&|r| r.precision[0]), pick(&|r| r.precision[1])],
        recall: [pick(&|r| r.recall[0]), pick(&|r| r.recall[1])],
        f1: [pick(&|r| r.f1[0]), pick(&|r| r.f1[1])],
        seconds: MetricSummary::of(&training.iter().map(|t| t.seconds).collect::<Vec<_>>()),
        stopping_epoch: MetricSummary::of(&training.iter().map(|t| t.stopping_epoch as f64).collect::<Vec<_>>()),
        train_set_mb: training[0].train_set_mb,
        runs,
        training,
    })
}

#[derive(Clone, Debug)]
pub struct GridSearchReport {
    /// `(learning rate, best validation accuracy)` per trial, in input order.
    pub trials: Vec<(f64, f64)>,
    pub best_learning_rate: f64,
    pub best: TrainOutcome,
}

/// Trains once per learning rate and keeps the run with the highest
/// validation accuracy; ties go to the earlier rate.
pub fn grid_search(
    config: &TrainConfig,
    data: &DatasetSplit,
    plot: &PlotConfig,
    learning_rates: &[f64],
) -> Result<GridSearchReport> {
    let mut trials = Vec::with_capacity(learning_rates.len());
    let mut best: Option<TrainOutcome> = None;
    for &lr in learning_rates {
        let cfg = TrainConfig {
            learning_rate: lr,
            ..config.clone()
        };
        let out = train(&cfg, data, plot, None)?;
        trials.push((lr, out.report.best_val_accuracy));
        if best
            .as_ref()
            .is_none_or(|b| out.report.best_val_accuracy > b.report.best_val_accuracy)
        {
            best = Some(out);
        }
    }
    let best = best.ok_or_else(|| Error::Input("grid search needs at least one learning rate".into()))?;
    Ok(GridSearchReport {
        trials,
        best_learning_rate: best.report.learning_rate,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = MetricSummary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MetricSummary::of(&[0.7]).std, 0.0);
    }
}
