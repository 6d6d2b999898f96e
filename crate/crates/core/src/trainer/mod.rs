//! Mini-batch training with early stopping for the teacher, the student,
//! the distilled student and the fusion model.

mod benchmark;
mod loss;

pub use benchmark::{grid_search, run_seeded_benchmark, BenchmarkReport, GridSearchReport, MetricSummary};
pub use loss::{distill_loss, soft_targets};

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::{DatasetSplit, TimeSeriesRecord};
use crate::error::{Error, Result};
use crate::metrics::batch_for;
use crate::models::{Architecture, Batch, FusionConfig, Model, OutputHead, StudentConfig, TeacherConfig};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::raster::PlotConfig;
use crate::seed::stream_rng;
use crate::tensor::{kernels, Tensor};

use loss::{combined_loss, LossShares};

/// Bytes per stored value in the train-set memory estimate.
pub const BYTES_PER_VALUE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    TeacherOnly,
    StudentOnly,
    Distill,
    Fusion,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::TeacherOnly => "teacher-only",
            TrainMode::StudentOnly => "student-only",
            TrainMode::Distill => "distill",
            TrainMode::Fusion => "fusion",
        }
    }

    pub fn uses_images(self) -> bool {
        !matches!(self, TrainMode::TeacherOnly)
    }

    pub fn uses_series(self) -> bool {
        !matches!(self, TrainMode::StudentOnly)
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher-only" | "teacher" => Ok(TrainMode::TeacherOnly),
            "student-only" | "student" => Ok(TrainMode::StudentOnly),
            "distill" => Ok(TrainMode::Distill),
            "fusion" => Ok(TrainMode::Fusion),
            other => Err(Error::Input(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub max_epochs: usize,
    pub patience: usize,
    /// Weight of the hard-label term in the distillation loss.
    pub alpha: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weight the cross-entropy by inverse class frequency.
    pub class_weights: bool,
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    pub filters: usize,
    pub rescale: f64,
    pub head: OutputHead,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::TeacherOnly,
            max_epochs: 300,
            patience: 20,
            alpha: 0.5,
            temperature: 2.0,
            batch_size: 32,
            learning_rate: AdamConfig::default().learning_rate,
            seed: 0,
            class_weights: false,
            teacher_hidden: vec![256, 128],
            student_hidden: vec![64],
            filters: 32,
            rescale: 1.0,
            head: OutputHead::Softmax,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return bad(format!(
                "patience {} must be in 1..max_epochs ({})",
                self.patience, self.max_epochs
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be non-negative", self.learning_rate));
        }
        Ok(())
    }

    pub fn teacher_config(&self, series_len: usize) -> TeacherConfig {
        TeacherConfig {
            input_len: series_len,
            hidden: self.teacher_hidden.clone(),
            head: self.head,
        }
    }

    pub fn student_config(&self, plot: &PlotConfig) -> StudentConfig {
        StudentConfig {
            rescale: self.rescale,
            filters: self.filters,
            hidden: self.student_hidden.clone(),
            head: self.head,
            ..StudentConfig::new(plot.height, plot.width)
        }
    }

    /// Architecture trained by this configuration. Distillation trains a
    /// student.
    pub fn architecture(&self, series_len: usize, plot: &PlotConfig) -> Architecture {
        match self.mode {
            TrainMode::TeacherOnly => Architecture::Teacher(self.teacher_config(series_len)),
            TrainMode::StudentOnly | TrainMode::Distill => Architecture::Student(self.student_config(plot)),
            TrainMode::Fusion => Architecture::Fusion(FusionConfig {
                teacher: self.teacher_config(series_len),
                student: self.student_config(plot),
                head: self.head,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Plain cross-entropy on the validation set.
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub seed: u64,
    pub learning_rate: f64,
    pub history: Vec<EpochRecord>,
    /// Last epoch run (1-based).
    pub stopping_epoch: usize,
    /// Epoch whose weights were restored (1-based).
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub seconds: f64,
    pub train_set_mb: f64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,val_loss,val_acc";

    pub fn history_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.history {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            );
        }
        s
    }

    /// Summary without the per-epoch history.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.mode,
            "seed": self.seed,
            "learning_rate": self.learning_rate,
            "stopping_epoch": self.stopping_epoch,
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
            "seconds": self.seconds,
            "train_set_mb": self.train_set_mb,
        })
    }
}

/// A trained model plus, for distillation, the teacher it learned from.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
    pub teacher: Option<Model>,
    pub teacher_report: Option<TrainReport>,
}

/// Size in MB (10⁶ bytes) of the training inputs a mode holds in memory:
/// series arrays for modes that read series, rendered images for modes that
/// read images.
pub fn train_set_megabytes(mode: TrainMode, records: usize, series_len: usize, image: (usize, usize)) -> f64 {
    let mut values = 0usize;
    if mode == TrainMode::TeacherOnly || mode == TrainMode::Fusion || mode == TrainMode::Distill {
        values += records * series_len;
    }
    if mode.uses_images() {
        values += records * image.0 * image.1;
    }
    (values * BYTES_PER_VALUE) as f64 / 1e6
}

/// Inputs and labels in tensor form.
struct Prepared {
    batch: Batch,
    labels: Vec<usize>,
}

impl Prepared {
    fn new(model: &Model, records: &[TimeSeriesRecord], plot: &PlotConfig) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Input("empty partition".into()));
        }
        Ok(Prepared {
            batch: batch_for(model, records, plot)?,
            labels: records.iter().map(|r| r.label).collect(),
        })
    }

    fn select(&self, idx: &[usize]) -> (Batch, Vec<usize>) {
        (
            Batch {
                series: self.batch.series.as_ref().map(|t| t.gather(idx)),
                images: self.batch.images.as_ref().map(|t| t.gather(idx)),
            },
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Samples per tape inside one optimizer batch, bounding conv activation
/// memory.
fn micro_batch(arch: &Architecture, batch_size: usize) -> usize {
    let per_sample = match arch {
        Architecture::Student(s) => s.filters * s.height * s.width,
        Architecture::Fusion(f) => f.student.filters * f.student.height * f.student.width,
        Architecture::Teacher(_) => 1,
    };
    ((1usize << 21) / per_sample.max(1)).clamp(1, batch_size)
}

fn argmax_accuracy(logits: &Tensor, labels: &[usize]) -> usize {
    (0..labels.len())
        .filter(|&r| {
            let row = logits.row(r);
            usize::from(row[1] > row[0]) == labels[r]
        })
        .count()
}

fn mean_cross_entropy(logits: &Tensor, labels: &[usize]) -> f64 {
    let probs = kernels::softmax(logits);
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -probs.row(r)[y].max(crate::autodiff::PROB_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

/// Trains according to `config`. Distillation uses `teacher` when given and
/// otherwise trains a teacher first with the same settings.
pub fn train(config: &TrainConfig, data: &DatasetSplit, plot: &PlotConfig, teacher: Option<&Model>) -> Result<TrainOutcome> {
    config.validate()?;
    if config.mode.uses_images() {
        plot.validate()?;
    }
    let series_len = data.series_len();
    let mut teacher_report = None;
    let teacher_model = if config.mode == TrainMode::Distill {
        let t = match teacher {
            Some(t) => {
                if !matches!(t.architecture(), Architecture::Teacher(_)) {
                    return Err(Error::Architecture("distillation needs a teacher model".into()));
                }
                if t.architecture().series_len() != Some(series_len) {
                    return Err(Error::Architecture(format!(
                        "teacher expects series of length {:?}, data has {series_len}",
                        t.architecture().series_len()
                    )));
                }
                t.clone()
            }
            None => {
                let cfg = TrainConfig {
                    mode: TrainMode::TeacherOnly,
                    ..config.clone()
                };
                let out = train(&cfg, data, plot, None)?;
                teacher_report = Some(out.report);
                out.model
            }
        };
        Some(t)
    } else {
        None
    };

    let arch = config.architecture(series_len, plot);
    let mut model = Model::new(arch, config.seed)?;
    let started = Instant::now();

    let train_set = Prepared::new(&model, &data.train, plot)?;
    let val_set = Prepared::new(&model, &data.validation, plot)?;
    let soft = match &teacher_model {
        Some(t) => {
            let refs: Vec<&[f64]> = data.train.iter().map(|r| r.values.as_slice()).collect();
            let batch = Batch {
                series: Some(crate::models::series_batch(&refs)?),
                images: None,
            };
            Some(soft_targets(&t.logits(&batch)?, config.temperature))
        }
        None => None,
    };
    let class_weights = config.class_weights.then_some(data.class_weights);
    let (alpha, temperature) = (config.alpha, config.temperature);

    let mut optimizer = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..train_set.labels.len()).collect();
    let mut shuffle_rng = stream_rng(config.seed, "shuffle");
    let micro = micro_batch(model.architecture(), config.batch_size);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0usize;
    let mut stopping_epoch = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            model.params_mut().zero_grad();
            let total_weight: f64 = match class_weights {
                Some(w) => chunk.iter().map(|&i| w[train_set.labels[i]]).sum(),
                None => chunk.len() as f64,
            };
            let mut batch_loss = 0.0;
            for part in chunk.chunks(micro) {
                let (inputs, labels) = train_set.select(part);
                let part_weight: f64 = match class_weights {
                    Some(w) => labels.iter().map(|&y| w[y]).sum(),
                    None => labels.len() as f64,
                };
                let shares = LossShares {
                    ce: part_weight / total_weight,
                    kl: part.len() as f64 / chunk.len() as f64,
                };
                let targets = soft.as_ref().map(|s| s.gather(part));
                let mut tape = Tape::new();
                let s = inputs.series.map(|t| tape.constant(t));
                let i = inputs.images.map(|t| tape.constant(t));
                let out = model.forward(&mut tape, s, i, true)?;
                let loss = combined_loss(
                    &mut tape,
                    out.logits,
                    &labels,
                    targets.as_ref(),
                    alpha,
                    temperature,
                    class_weights.as_ref().map(|w| w.as_slice()),
                    shares,
                )?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        message: format!("loss became {value}"),
                    });
                }
                batch_loss += value;
                correct += argmax_accuracy(tape.value(out.logits), &labels);
                tape.backward(loss)?.accumulate_into(&tape, model.params_mut())?;
            }
            if model.params().iter().any(|p| !p.grad.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: "non-finite gradient".into(),
                });
            }
            optimizer.step(model.params_mut());
            loss_sum += batch_loss * chunk.len() as f64;
        }

        let n = order.len() as f64;
        let val_logits = model.logits(&val_set.batch)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss: mean_cross_entropy(&val_logits, &val_set.labels),
            val_acc: argmax_accuracy(&val_logits, &val_set.labels) as f64 / val_set.labels.len() as f64,
        };
        if !record.val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "validation loss is not finite".into(),
            });
        }
        let improved = best.as_ref().is_none_or(|(acc, _, _)| record.val_acc > *acc);
        if improved {
            best = Some((record.val_acc, epoch, model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(record);
        stopping_epoch = epoch;
        if since_best >= config.patience {
            break;
        }
    }

    let (best_val_accuracy, best_epoch, best_params) = best.expect("at least one epoch");
    model.params_mut().copy_values_from(&best_params);
    let report = TrainReport {
        mode: config.mode,
        seed: config.seed,
        learning_rate: config.learning_rate,
        history,
        stopping_epoch,
        best_epoch,
        best_val_accuracy,
        seconds: started.elapsed().as_secs_f64(),
        train_set_mb: train_set_megabytes(config.mode, data.train.len(), series_len, (plot.height, plot.width)),
    };
    Ok(TrainOutcome {
        model,
        report,
        teacher: teacher_model,
        teacher_report,
    })
}
