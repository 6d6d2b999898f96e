use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde_json::{json, Value};
use tsxd_core::dataset::DatasetInfo;
use tsxd_core::explain::{
    deletion_auc, gradcam_for_model, lime_explain, render_gradcam, render_lime, segment_scores, ModelClassifier,
};
use tsxd_core::image::write_rgb;
use tsxd_core::metrics::{evaluate, Decision};
use tsxd_core::models::{load_checkpoint, save_checkpoint};
use tsxd_core::raster::rasterize;
use tsxd_core::trainer::{run_seeded_benchmark, train, BenchmarkReport, MetricSummary};
use tsxd_core::{
    DatasetSplit, EvalReport, ImageFormat, Model, PlotConfig, SegmentMask, StoragePrecision, TimeSeriesRecord,
    TrainReport, UcrDataset,
};

use crate::config::RunConfig;
use crate::failure::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Lime,
    Gradcam,
    Both,
}

/// Options shared by every command writing files.
#[derive(Clone, Copy, Debug, Default)]
pub struct Output {
    pub no_timestamp: bool,
}

struct Loaded {
    dataset: UcrDataset,
    split: DatasetSplit,
}

fn load(cfg: &RunConfig) -> Result<Loaded, Failure> {
    let dataset = cfg.data.load()?;
    let split = cfg.data.split(&dataset)?;
    Ok(Loaded { dataset, split })
}

fn records(split: &DatasetSplit, which: Split) -> &[TimeSeriesRecord] {
    match which {
        Split::Train => &split.train,
        Split::Validation => &split.validation,
        Split::Test => &split.test,
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

/// Adds wall-clock fields unless suppressed; they are the only
/// nondeterministic content of any output.
fn stamp(value: &mut Value, out: Output) {
    let Value::Object(map) = value else { return };
    if out.no_timestamp {
        map.remove("seconds");
        return;
    }
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    map.insert("created_unix".into(), json!(now));
}

fn check_architecture(model: &Model, series_len: usize, plot: &PlotConfig) -> Result<(), Failure> {
    let arch = model.architecture();
    if let Some(l) = arch.series_len() {
        if l != series_len {
            return Err(Failure::mismatch(format!(
                "architecture mismatch: checkpoint expects series length {l}, dataset has {series_len}"
            )));
        }
    }
    if let Some((h, w)) = arch.image_size() {
        if (h, w) != (plot.height, plot.width) {
            return Err(Failure::mismatch(format!(
                "architecture mismatch: checkpoint expects {h}x{w} images, config renders {}x{}",
                plot.height, plot.width
            )));
        }
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    if !path.is_file() {
        return Err(Failure::config(format!("checkpoint {} does not exist", path.display())));
    }
    load_checkpoint(path).map_err(|e| Failure::config(e.to_string()))
}

struct SeedRun {
    report: TrainReport,
    eval: EvalReport,
}

fn train_one(cfg: &RunConfig, split: &DatasetSplit, seed: u64, dir: &Path, out: Output) -> Result<SeedRun, Failure> {
    let tc = tsxd_core::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let outcome = train(&tc, split, &cfg.plot, None)?;
    let eval = evaluate(&outcome.model, &split.test, &cfg.plot, Decision::Argmax)?;
    create_dir(dir)?;
    save_checkpoint(&outcome.model, &dir.join("model.ckpt"), StoragePrecision::F64)?;
    write(&dir.join("history.csv"), outcome.report.history_csv())?;
    write(&dir.join("metrics.csv"), eval.to_csv())?;
    if let (Some(teacher), Some(tr)) = (&outcome.teacher, &outcome.teacher_report) {
        save_checkpoint(teacher, &dir.join("teacher.ckpt"), StoragePrecision::F64)?;
        write(&dir.join("teacher_history.csv"), tr.history_csv())?;
    }
    let mut summary = outcome.report.summary_json();
    summary["test"] = serde_json::to_value(&eval)?;
    summary["architecture"] = serde_json::to_value(outcome.model.architecture())?;
    stamp(&mut summary, out);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(SeedRun {
        report: outcome.report,
        eval,
    })
}

/// Trains one model per seed. A single seed writes into the output
/// directory itself; several seeds write `seed-<k>/` subdirectories plus an
/// aggregate summary.
pub fn cmd_train(cfg: &RunConfig, out: Output) -> Result<PathBuf, Failure> {
    let loaded = load(cfg)?;
    let seeds = cfg.seed_list()?;
    let dir = cfg.resolve_out_dir();
    create_dir(&dir)?;
    if let [seed] = seeds[..] {
        let run = train_one(cfg, &loaded.split, seed, &dir, out)?;
        println!("{}", run.eval.table(&format!("{} {} seed {seed}", loaded.dataset.name, cfg.train.mode)));
        return Ok(dir);
    }
    let runs: Vec<SeedRun> = seeds
        .par_iter()
        .map(|&s| train_one(cfg, &loaded.split, s, &dir.join(format!("seed-{s}")), out))
        .collect::<Result<_, _>>()?;
    let mut csv = format!("seed,{}\n", EvalReport::CSV_HEADER);
    for (s, r) in seeds.iter().zip(&runs) {
        csv.push_str(&format!("{s},{}\n", r.eval.csv_row()));
    }
    write(&dir.join("metrics.csv"), csv)?;
    let summarize = |f: &dyn Fn(&SeedRun) -> f64| MetricSummary::of(&runs.iter().map(f).collect::<Vec<_>>());
    let mut summary = json!({
        "dataset": loaded.dataset.name,
        "mode": cfg.train.mode,
        "seeds": seeds,
        "accuracy": summarize(&|r| r.eval.accuracy),
        "precision_0": summarize(&|r| r.eval.precision[0]),
        "precision_1": summarize(&|r| r.eval.precision[1]),
        "f1_0": summarize(&|r| r.eval.f1[0]),
        "f1_1": summarize(&|r| r.eval.f1[1]),
        "stopping_epoch": summarize(&|r| r.report.stopping_epoch as f64),
        "train_set_mb": runs[0].report.train_set_mb,
    });
    let seconds = summarize(&|r| r.report.seconds);
    stamp(&mut summary, out);
    if !out.no_timestamp {
        summary["seconds"] = serde_json::to_value(seconds)?;
    }
    write_json(&dir.join("summary.json"), &summary)?;
    let acc = summarize(&|r| r.eval.accuracy);
    println!(
        "{} {} over {} seeds: accuracy {:.4} ± {:.4}",
        loaded.dataset.name,
        cfg.train.mode,
        seeds.len(),
        acc.mean,
        acc.std
    );
    Ok(dir)
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, which: Split, out: Output) -> Result<EvalReport, Failure> {
    let model = load_model(checkpoint)?;
    let loaded = load(cfg)?;
    check_architecture(&model, loaded.dataset.series_len(), &cfg.plot)?;
    let report = evaluate(&model, records(&loaded.split, which), &cfg.plot, Decision::Argmax)?;
    let dir = cfg.resolve_out_dir();
    create_dir(&dir)?;
    write(&dir.join("evaluation.csv"), report.to_csv())?;
    let mut value = json!({
        "dataset": loaded.dataset.name,
        "checkpoint": checkpoint.display().to_string(),
        "model": model.kind(),
        "split": format!("{which:?}").to_lowercase(),
        "report": report,
    });
    stamp(&mut value, out);
    write_json(&dir.join("evaluation.json"), &value)?;
    print!("{}", report.table(&format!("{} ({:?})", loaded.dataset.name, model.kind())));
    Ok(report)
}

pub struct ExplainArgs {
    pub checkpoint: PathBuf,
    pub index: usize,
    pub method: Method,
    pub split: Split,
    pub format: ImageFormat,
}

fn record_at(records: &[TimeSeriesRecord], index: usize, which: Split) -> Result<&TimeSeriesRecord, Failure> {
    records.get(index).ok_or_else(|| {
        Failure::config(format!(
            "index {index} out of range: {which:?} split has {} records",
            records.len()
        ))
    })
}

/// Writes explanation images and JSON for one record; returns the paths.
pub fn cmd_explain(cfg: &RunConfig, args: &ExplainArgs, out: Output) -> Result<Vec<PathBuf>, Failure> {
    let model = load_model(&args.checkpoint)?;
    if !model.needs_image() {
        return Err(tsxd_core::Error::NoImageBranch.into());
    }
    let loaded = load(cfg)?;
    let series_len = loaded.dataset.series_len();
    check_architecture(&model, series_len, &cfg.plot)?;
    let record = record_at(records(&loaded.split, args.split), args.index, args.split)?;
    let image = rasterize(&record.values, &cfg.plot)?;
    let classifier = ModelClassifier::new(&model, Some(&record.values))?;
    let mask = SegmentMask::new(image.height(), image.width(), cfg.explain.strategy()?)?;
    let probs = model.trace(Some(&record.values), &image)?.probabilities();
    let class = usize::from(probs[1] > probs[0]);

    let dir = cfg.resolve_out_dir();
    create_dir(&dir)?;
    let ext = args.format.extension();
    let i = args.index;
    let mut written = Vec::new();
    let mut emit_image = |name: String, img: &tsxd_core::RgbImage| -> Result<(), Failure> {
        let path = dir.join(name);
        write_rgb(img, &path, args.format)?;
        written.push(path);
        Ok(())
    };
    emit_image(format!("record-{i}_original.{ext}"), &image.to_rgb())?;

    let mut prediction = json!({
        "dataset": loaded.dataset.name,
        "split": format!("{:?}", args.split).to_lowercase(),
        "index": i,
        "source_row": record.source_row,
        "label": record.label,
        "predicted_class": class,
        "probabilities": probs,
        "model": model.kind(),
        "segmentation": mask.strategy().to_string(),
    });

    if matches!(args.method, Method::Gradcam | Method::Both) {
        let (heatmap, _) = gradcam_for_model(&model, Some(&record.values), &image, Some(class))?;
        emit_image(
            format!("record-{i}_gradcam_heatmap_class-{class}.{ext}"),
            &render_gradcam(&image, &heatmap, 1.0)?,
        )?;
        emit_image(
            format!("record-{i}_gradcam_overlay_class-{class}.{ext}"),
            &render_gradcam(&image, &heatmap, cfg.explain.alpha)?,
        )?;
        let scores = segment_scores(&heatmap, &mask)?;
        let (peak_row, peak_col) = heatmap.argmax();
        prediction["gradcam"] = json!({
            "peak": [peak_row, peak_col],
            "segment_scores": scores,
            "deletion_auc": deletion_auc(&classifier, &image, &mask, &scores, class)?,
        });
    }
    if matches!(args.method, Method::Lime | Method::Both) {
        let explanation = lime_explain(&classifier, &image, &mask, &cfg.explain.lime())?;
        emit_image(
            format!("record-{i}_lime_overlay_class-{class}.{ext}"),
            &render_lime(&image, &explanation, &mask, cfg.explain.top_k)?,
        )?;
        let auc = deletion_auc(&classifier, &image, &mask, &explanation.weights, class)?;
        let mut lime = explanation.to_json(&mask, Some(series_len));
        lime["deletion_auc"] = json!(auc);
        let path = dir.join(format!("record-{i}_lime_class-{class}.json"));
        write_json(&path, &lime)?;
        written.push(path);
        prediction["lime"] = json!({ "deletion_auc": auc });
    }
    stamp(&mut prediction, out);
    let path = dir.join(format!("record-{i}_prediction_class-{class}.json"));
    write_json(&path, &prediction)?;
    written.push(path);
    println!("record {i}: predicted class {class} (p = [{:.4}, {:.4}])", probs[0], probs[1]);
    Ok(written)
}

/// `"0,3,5"`, `"2..6"` (inclusive) or `"all"`.
pub fn parse_indices(text: &str, len: usize) -> Result<Vec<usize>, Failure> {
    if text.trim() == "all" {
        return Ok((0..len).collect());
    }
    let seeds = crate::config::parse_seeds(text)
        .map_err(|_| Failure::config(format!("indices: cannot parse `{text}`; use `a..b`, `a,b,c` or `all`")))?;
    seeds
        .into_iter()
        .map(|i| {
            let i = i as usize;
            if i < len {
                Ok(i)
            } else {
                Err(Failure::config(format!("index {i} out of range: split has {len} records")))
            }
        })
        .collect()
}

pub fn cmd_rasterize(cfg: &RunConfig, indices: &str, which: Split, format: ImageFormat) -> Result<Vec<PathBuf>, Failure> {
    let loaded = load(cfg)?;
    let recs = records(&loaded.split, which);
    let indices = parse_indices(indices, recs.len())?;
    let dir = cfg.resolve_out_dir();
    create_dir(&dir)?;
    let split_name = format!("{which:?}").to_lowercase();
    indices
        .iter()
        .map(|&i| {
            let image = rasterize(&recs[i].values, &cfg.plot)?;
            let path = dir.join(format!("{split_name}-{i}_class-{}.{}", recs[i].label, format.extension()));
            write_rgb(&image.to_rgb(), &path, format)?;
            Ok(path)
        })
        .collect()
}

pub fn cmd_info(cfg: &RunConfig) -> Result<DatasetInfo, Failure> {
    let info = cfg.data.info()?;
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(info)
}

/// Seeded train-and-test runs of the configured mode, aggregated.
pub fn cmd_benchmark(cfg: &RunConfig, out: Output) -> Result<BenchmarkReport, Failure> {
    let loaded = load(cfg)?;
    let seeds = cfg.seed_list()?;
    let report = run_seeded_benchmark(&cfg.train, &loaded.split, &cfg.plot, &seeds)?;
    let dir = cfg.resolve_out_dir();
    create_dir(&dir)?;
    let mut csv = format!("seed,stopping_epoch,{}\n", EvalReport::CSV_HEADER);
    for ((s, r), t) in seeds.iter().zip(&report.runs).zip(&report.training) {
        csv.push_str(&format!("{s},{},{}\n", t.stopping_epoch, r.csv_row()));
    }
    write(&dir.join("benchmark.csv"), csv)?;
    let mut value = json!({
        "dataset": loaded.dataset.name,
        "mode": report.mode,
        "seeds": report.seeds,
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "stopping_epoch": report.stopping_epoch,
        "train_set_mb": report.train_set_mb,
    });
    stamp(&mut value, out);
    if !out.no_timestamp {
        value["seconds"] = serde_json::to_value(report.seconds)?;
    }
    write_json(&dir.join("benchmark.json"), &value)?;
    println!(
        "{} {}: accuracy {:.4} ± {:.4}, precision0 {:.4}, f1_0 {:.4}, {:.3} MB train set, {:.1} s/run",
        loaded.dataset.name,
        report.mode,
        report.accuracy.mean,
        report.accuracy.std,
        report.precision[0].mean,
        report.f1[0].mean,
        report.train_set_mb,
        report.seconds.mean
    );
    Ok(report)
}
