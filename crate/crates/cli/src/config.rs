//! Run configuration: one TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tsxd_core::dataset::{self, DatasetInfo};
use tsxd_core::explain::LimeConfig;
use tsxd_core::{DatasetSplit, PlotConfig, SegmentStrategy, TrainConfig, UcrDataset};

use crate::failure::Failure;

pub const DATA_DIR_ENV: &str = "TSXD_DATA_DIR";
pub const OUT_DIR_ENV: &str = "TSXD_OUT_DIR";
pub const MIN_IMAGE_SIZE: usize = 32;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub plot: PlotConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
    pub out_dir: Option<PathBuf>,
    /// Seed list as `a..b` (inclusive) or comma separated.
    pub seeds: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// UCR dataset name, resolved as `<dir>/<name>/<name>_TRAIN.tsv`.
    pub name: Option<String>,
    pub dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub znormalize: bool,
    pub validation_fraction: f64,
    pub split_seed: u64,
    /// Stratified subsample of the train file, for quick runs.
    pub max_train: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            name: None,
            dir: None,
            train: None,
            test: None,
            znormalize: false,
            validation_fraction: 0.2,
            split_seed: 0,
            max_train: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// `grid:RxC`, `grid:N` or `vstrip:N`.
    pub segmentation: String,
    pub top_k: usize,
    /// Heatmap opacity in the Grad-CAM overlay.
    pub alpha: f64,
    pub n_samples: usize,
    pub kernel_width: Option<f64>,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        let lime = LimeConfig::default();
        ExplainConfig {
            segmentation: SegmentStrategy::default().to_string(),
            top_k: tsxd_core::explain::LIME_TOP_K,
            alpha: tsxd_core::explain::GRADCAM_ALPHA,
            n_samples: lime.n_samples,
            kernel_width: lime.kernel_width,
            ridge_lambda: lime.ridge_lambda,
            seed: lime.seed,
        }
    }
}

impl ExplainConfig {
    pub fn strategy(&self) -> Result<SegmentStrategy, Failure> {
        self.segmentation
            .parse()
            .map_err(|e| Failure::config(format!("explain.segmentation: {e}")))
    }

    pub fn lime(&self) -> LimeConfig {
        LimeConfig {
            n_samples: self.n_samples,
            kernel_width: self.kernel_width,
            ridge_lambda: self.ridge_lambda,
            seed: self.seed,
            ..LimeConfig::default()
        }
    }
}

impl RunConfig {
    /// Parses a TOML file; syntax and schema errors carry line and column.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    let col = s.start - text[..s.start].rfind('\n').map_or(0, |i| i + 1) + 1;
                    format!("{origin}:{line}:{col}: ")
                })
                .unwrap_or_else(|| format!("{origin}: "));
            Failure::config(format!("{location}{}", e.message()))
        })
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.train.validate().map_err(|e| Failure::config(format!("train: {e}")))?;
        self.plot.validate().map_err(|e| Failure::config(format!("plot: {e}")))?;
        if self.plot.height < MIN_IMAGE_SIZE || self.plot.width < MIN_IMAGE_SIZE {
            return Err(Failure::config(format!(
                "plot: image size {}x{} is below the minimum {MIN_IMAGE_SIZE}",
                self.plot.height, self.plot.width
            )));
        }
        self.explain.strategy()?;
        if !(0.0..=1.0).contains(&self.explain.alpha) {
            return Err(Failure::config(format!("explain.alpha {} outside [0, 1]", self.explain.alpha)));
        }
        let f = self.data.validation_fraction;
        if !(f > 0.0 && f < 0.5) {
            return Err(Failure::config(format!("data.validation_fraction {f} must lie in (0, 0.5)")));
        }
        Ok(())
    }

    /// Output directory: config, then `TSXD_OUT_DIR`, then `./out`.
    pub fn resolve_out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed_list(&self) -> Result<Vec<u64>, Failure> {
        match &self.seeds {
            Some(s) => parse_seeds(s),
            None => Ok(vec![self.train.seed]),
        }
    }
}

/// `"0..9"` (inclusive) or `"1,4,7"`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::config(format!("seeds: cannot parse `{text}`; use `a..b` or `a,b,c`"));
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

impl DataConfig {
    fn paths(&self) -> Result<(PathBuf, PathBuf, String), Failure> {
        match (&self.train, &self.test) {
            (Some(tr), Some(te)) => {
                let name = self.name.clone().unwrap_or_else(|| {
                    tr.file_stem().map_or("dataset".into(), |s| {
                        s.to_string_lossy().trim_end_matches("_TRAIN").to_string()
                    })
                });
                Ok((tr.clone(), te.clone(), name))
            }
            (Some(_), None) => Err(Failure::config("missing key `data.test` (required with `data.train`)")),
            (None, Some(_)) => Err(Failure::config("missing key `data.train` (required with `data.test`)")),
            (None, None) => {
                let name = self
                    .name
                    .clone()
                    .ok_or_else(|| Failure::config("missing key `data.name` (or `data.train` and `data.test`)"))?;
                let dir = self
                    .dir
                    .clone()
                    .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
                    .unwrap_or_else(|| PathBuf::from("data/ucr"));
                let (tr, te) = dataset::ucr_paths(&dir, &name);
                Ok((tr, te, name))
            }
        }
    }

    pub fn load(&self) -> Result<UcrDataset, Failure> {
        let (train, test, name) = self.paths()?;
        for (key, p) in [("data.train", &train), ("data.test", &test)] {
            if !p.is_file() {
                return Err(Failure::config(format!("{key}: file {} does not exist", p.display())));
            }
        }
        let mut ds = dataset::load_ucr(&train, &test).map_err(Failure::from_data)?;
        ds.name = name;
        if let Some(n) = self.max_train {
            ds.train = dataset::subsample(&ds.train, n, self.split_seed).map_err(Failure::from_data)?;
        }
        if self.znormalize {
            ds.train = dataset::znormalize(&ds.train);
            ds.test = dataset::znormalize(&ds.test);
        }
        Ok(ds)
    }

    pub fn split(&self, ds: &UcrDataset) -> Result<DatasetSplit, Failure> {
        dataset::split(&ds.train, &ds.test, self.validation_fraction, self.split_seed).map_err(Failure::from_data)
    }

    pub fn info(&self) -> Result<DatasetInfo, Failure> {
        Ok(DatasetInfo::of(&self.load()?))
    }
}
