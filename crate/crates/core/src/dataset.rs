//! UCR-format ingestion, normalization and seeded stratified splits.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::stream_rng;

/// One labeled univariate series.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesRecord {
    pub values: Vec<f64>,
    /// Class index, 0 or 1.
    pub label: usize,
    /// Zero-based row in the file the record was read from.
    pub source_row: usize,
}

/// Train and test partitions as read from a pair of UCR files.
#[derive(Clone, Debug)]
pub struct UcrDataset {
    pub name: String,
    pub train: Vec<TimeSeriesRecord>,
    pub test: Vec<TimeSeriesRecord>,
}

impl UcrDataset {
    pub fn series_len(&self) -> usize {
        self.train.first().map_or(0, |r| r.values.len())
    }
}

/// Train/validation/test partitions of one dataset.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<TimeSeriesRecord>,
    pub validation: Vec<TimeSeriesRecord>,
    pub test: Vec<TimeSeriesRecord>,
    pub seed: u64,
    /// Inverse class frequency over `train`: `N / (2 · n_c)`.
    pub class_weights: [f64; 2],
}

impl DatasetSplit {
    pub fn series_len(&self) -> usize {
        self.train.first().map_or(0, |r| r.values.len())
    }
}

fn map_label(raw: f64, row: usize) -> Result<usize> {
    if raw == -1.0 || raw == 0.0 {
        Ok(0)
    } else if raw == 1.0 {
        Ok(1)
    } else {
        Err(Error::Label { row, value: raw })
    }
}

/// Parses UCR text: one record per line, label first, then the values.
/// Tab, comma or whitespace separation is detected per line. Labels `-1`/`1`
/// map to 0/1; labels already in `{0, 1}` pass through. Row numbers in
/// errors are 1-based.
pub fn parse_ucr(text: &str) -> Result<Vec<TimeSeriesRecord>> {
    let mut records = Vec::new();
    let mut len = None;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else if line.contains(',') {
            line.split(',').collect()
        } else {
            line.split_whitespace().collect()
        };
        let mut nums = Vec::with_capacity(fields.len());
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                row,
                message: format!("`{}` is not a number", f.trim()),
            })?;
            nums.push(v);
        }
        if nums.len() < 2 {
            return Err(Error::Parse {
                row,
                message: "row has no values after the label".into(),
            });
        }
        let label = map_label(nums[0], row)?;
        let values = nums.split_off(1);
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row,
                message: format!("non-finite value {v}"),
            });
        }
        match len {
            None => len = Some(values.len()),
            Some(l) if l != values.len() => {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {l} values, found {}", values.len()),
                })
            }
            _ => {}
        }
        records.push(TimeSeriesRecord {
            values,
            label,
            source_row: i,
        });
    }
    if records.is_empty() {
        return Err(Error::Input("no records".into()));
    }
    Ok(records)
}

pub fn read_ucr_file(path: &Path) -> Result<Vec<TimeSeriesRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ucr(&text).map_err(|e| match e {
        Error::Parse { row, message } => Error::Parse {
            row,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Loads a UCR train/test pair and checks both share one series length.
pub fn load_ucr(train_path: &Path, test_path: &Path) -> Result<UcrDataset> {
    let train = read_ucr_file(train_path)?;
    let test = read_ucr_file(test_path)?;
    let (a, b) = (train[0].values.len(), test[0].values.len());
    if a != b {
        return Err(Error::Input(format!(
            "train series length {a} differs from test series length {b}"
        )));
    }
    let name = train_path
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.trim_end_matches("_TRAIN").to_string())
        .unwrap_or_default();
    Ok(UcrDataset { name, train, test })
}

/// `{dir}/{name}/{name}_TRAIN.tsv` and `{dir}/{name}/{name}_TEST.tsv`.
pub fn ucr_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    let base = dir.join(name);
    (
        base.join(format!("{name}_TRAIN.tsv")),
        base.join(format!("{name}_TEST.tsv")),
    )
}

/// Serializes records in tab-separated UCR form using shortest round-trip
/// float formatting.
pub fn to_ucr_tsv(records: &[TimeSeriesRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = write!(out, "{}", r.label);
        for v in &r.values {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

/// Per-series z-normalization (population standard deviation). Series with
/// zero variance become all zeros.
pub fn znormalize(records: &[TimeSeriesRecord]) -> Vec<TimeSeriesRecord> {
    records
        .iter()
        .map(|r| TimeSeriesRecord {
            values: znormalize_series(&r.values),
            ..r.clone()
        })
        .collect()
}

pub fn znormalize_series(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

pub fn class_counts(records: &[TimeSeriesRecord]) -> [usize; 2] {
    let mut c = [0; 2];
    for r in records {
        c[r.label] += 1;
    }
    c
}

/// Picks `take` indices from `records`, stratified by class with the
/// largest-remainder rule, shuffled within each class by `rng`.
fn stratified_pick(records: &[TimeSeriesRecord], take: usize, rng: &mut impl rand::Rng) -> Result<BTreeSet<usize>> {
    let n = records.len();
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, r) in records.iter().enumerate() {
        by_class[r.label].push(i);
    }
    let quotas: Vec<(usize, f64)> = by_class
        .iter()
        .map(|c| {
            let exact = take as f64 * c.len() as f64 / n as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.0).collect();
    let mut remaining = take - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..2).collect();
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if counts[c] < by_class[c].len() {
            counts[c] += 1;
            remaining -= 1;
        }
    }
    let mut picked = BTreeSet::new();
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(rng);
        picked.extend(members.iter().take(counts[c]).copied());
    }
    Ok(picked)
}

/// Seeded stratified subsample of at most `n` records, in original order.
pub fn subsample(records: &[TimeSeriesRecord], n: usize, seed: u64) -> Result<Vec<TimeSeriesRecord>> {
    if n >= records.len() {
        return Ok(records.to_vec());
    }
    let mut rng = stream_rng(seed, "subsample");
    let picked = stratified_pick(records, n, &mut rng)?;
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}

/// Stratified train/validation split of the original train partition; the
/// test partition is passed through untouched.
pub fn split(
    train: &[TimeSeriesRecord],
    test: &[TimeSeriesRecord],
    validation_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(validation_fraction > 0.0 && validation_fraction < 0.5) {
        return Err(Error::Input(format!(
            "validation fraction {validation_fraction} must lie in (0, 0.5)"
        )));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Input("empty train or test partition".into()));
    }
    let counts = class_counts(train);
    for (class, &count) in counts.iter().enumerate() {
        if count < 2 {
            return Err(Error::Stratification { class, count });
        }
    }
    let take = (validation_fraction * train.len() as f64).round() as usize;
    let mut rng = stream_rng(seed, "split");
    let val_idx = stratified_pick(train, take, &mut rng)?;
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (i, r) in train.iter().enumerate() {
        if val_idx.contains(&i) {
            va.push(r.clone());
        } else {
            tr.push(r.clone());
        }
    }
    let tc = class_counts(&tr);
    let n = tr.len() as f64;
    let class_weights = [n / (2.0 * tc[0].max(1) as f64), n / (2.0 * tc[1].max(1) as f64)];
    Ok(DatasetSplit {
        train: tr,
        validation: va,
        test: test.to_vec(),
        seed,
        class_weights,
    })
}

/// Summary emitted by the `info` command.
#[derive(Clone, Debug, Serialize)]
pub struct DatasetInfo {
    pub name: String,
    pub series_len: usize,
    pub train_records: usize,
    pub test_records: usize,
    pub train_class_counts: [usize; 2],
    pub test_class_counts: [usize; 2],
    pub train_class0_fraction: f64,
    pub test_class0_fraction: f64,
}

impl DatasetInfo {
    pub fn of(ds: &UcrDataset) -> Self {
        let tr = class_counts(&ds.train);
        let te = class_counts(&ds.test);
        DatasetInfo {
            name: ds.name.clone(),
            series_len: ds.series_len(),
            train_records: ds.train.len(),
            test_records: ds.test.len(),
            train_class_counts: tr,
            test_class_counts: te,
            train_class0_fraction: tr[0] as f64 / ds.train.len() as f64,
            test_class0_fraction: te[0] as f64 / ds.test.len() as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, minority_every: usize) -> Vec<TimeSeriesRecord> {
        (0..n)
            .map(|i| TimeSeriesRecord {
                values: vec![i as f64, (i * 7 % 13) as f64, 1.0],
                label: usize::from(i % minority_every != 0),
                source_row: i,
            })
            .collect()
    }

    #[test]
    fn parses_tab_row() {
        let r = parse_ucr("1\t0.1\t0.2\n").unwrap();
        assert_eq!(r[0].label, 1);
        assert_eq!(r[0].values, vec![0.1, 0.2]);
    }

    #[test]
    fn maps_negative_label() {
        let r = parse_ucr("-1,3,4\n0 5 6\n1.0000000e+00,7,8\n").unwrap();
        assert_eq!(r.iter().map(|r| r.label).collect::<Vec<_>>(), vec![0, 0, 1]);
        assert_eq!(r[1].values, vec![5.0, 6.0]);
    }

    #[test]
    fn ragged_rows_name_the_row() {
        let err = parse_ucr("1\t1\t2\n1\t1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_label() {
        let err = parse_ucr("1\t1\t2\n2\t1\t3\n").unwrap_err();
        assert!(matches!(err, Error::Label { row: 2, value } if value == 2.0));
    }

    #[test]
    fn znormalize_values() {
        let out = znormalize_series(&[1.0, 2.0, 3.0]);
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(znormalize_series(&[4.0; 5]), vec![0.0; 5]);
    }

    #[test]
    fn split_sizes_and_ratio() {
        let records = synthetic(1000, 10);
        let s = split(&records, &records[..10], 0.2, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (800, 200));
        let vc = class_counts(&s.validation);
        // 10% minority -> 20 of 200
        assert!((vc[0] as i64 - 20).abs() <= 1, "{vc:?}");
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).map(|r| r.source_row).collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_seeded() {
        let records = synthetic(200, 4);
        let rows = |s: &DatasetSplit| s.validation.iter().map(|r| r.source_row).collect::<Vec<_>>();
        let a = split(&records, &records, 0.2, 1).unwrap();
        let b = split(&records, &records, 0.2, 1).unwrap();
        let c = split(&records, &records, 0.2, 2).unwrap();
        assert_eq!(rows(&a), rows(&b));
        assert_ne!(rows(&a), rows(&c));
        assert_eq!(a.validation.len(), c.validation.len());
    }

    #[test]
    fn split_needs_two_per_class() {
        let mut records = synthetic(20, 100);
        records.iter_mut().skip(1).for_each(|r| r.label = 1);
        let err = split(&records, &records, 0.2, 0).unwrap_err();
        assert!(matches!(err, Error::Stratification { class: 0, count: 1 }));
        assert!(split(&synthetic(20, 2), &synthetic(4, 2), 0.6, 0).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let records = vec![TimeSeriesRecord {
            values: vec![0.1, -2.5e-7, 1.0 / 3.0],
            label: 1,
            source_row: 0,
        }];
        assert_eq!(parse_ucr(&to_ucr_tsv(&records)).unwrap(), records);
    }

    #[test]
    fn subsample_is_stratified() {
        let records = synthetic(1000, 10);
        let s = subsample(&records, 100, 5).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(class_counts(&s), [10, 90]);
        assert_eq!(s, subsample(&records, 100, 5).unwrap());
    }
}
