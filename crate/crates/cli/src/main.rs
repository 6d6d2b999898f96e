//! `tsxd`: train, evaluate and explain binary time-series classifiers that
//! see both the raw series and a rendered line plot of it.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tsxd_core::{ImageFormat, PlotConfig, TrainMode};

use commands::{ExplainArgs, Method, Output, Split};
use config::RunConfig;
use failure::Failure;

#[derive(Parser)]
#[command(name = "tsxd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes model.ckpt, history.csv, metrics.csv, summary.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
    },
    /// Evaluate a checkpoint and print the metrics table.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Explain one record with LIME and/or Grad-CAM.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum, default_value = "both")]
        method: Method,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// `grid:RxC`, `grid:N` or `vstrip:N`.
        #[arg(long)]
        segmentation: Option<String>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        lime_seed: Option<u64>,
        #[arg(long, value_enum, default_value = "ppm")]
        format: Format,
    },
    /// Render records as line-plot images.
    Rasterize {
        #[command(flatten)]
        common: Common,
        /// `a,b,c`, `a..b` (inclusive) or `all`.
        #[arg(long, default_value = "0")]
        indices: String,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, value_enum, default_value = "ppm")]
        format: Format,
    },
    /// Print dataset shape and class balance.
    Info {
        #[command(flatten)]
        common: Common,
    },
    /// Seeded train-and-test runs of one mode, aggregated.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ppm,
    Png,
}

impl From<Format> for ImageFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Ppm => ImageFormat::Ppm,
            Format::Png => ImageFormat::Png,
        }
    }
}

/// Flags accepted by every command; each overrides the config file.
#[derive(Args)]
struct Common {
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// UCR dataset name under the data directory.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    train_file: Option<PathBuf>,
    #[arg(long)]
    test_file: Option<PathBuf>,
    #[arg(long)]
    max_train: Option<usize>,
    /// Square image side in pixels.
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Omit wall-clock fields from JSON outputs.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct Training {
    #[arg(long)]
    mode: Option<TrainMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// `a..b` (inclusive) or `a,b,c`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.data.name = Some(v.clone());
        }
        if let Some(v) = &self.data_dir {
            cfg.data.dir = Some(v.clone());
        }
        if let Some(v) = &self.train_file {
            cfg.data.train = Some(v.clone());
        }
        if let Some(v) = &self.test_file {
            cfg.data.test = Some(v.clone());
        }
        if let Some(v) = self.max_train {
            cfg.data.max_train = Some(v);
        }
        if let Some(s) = self.image_size {
            cfg.plot = PlotConfig {
                height: s,
                width: s,
                ..cfg.plot
            };
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = Some(v.clone());
        }
        Ok(cfg)
    }

    fn output(&self) -> Output {
        Output {
            no_timestamp: self.no_timestamp,
        }
    }
}

impl Training {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = self.mode {
            cfg.train.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.seeds = None;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = Some(s.clone());
        }
        if let Some(e) = self.epochs {
            cfg.train.max_epochs = e;
            cfg.train.patience = cfg.train.patience.min(e.saturating_sub(1)).max(1);
        }
        if let Some(p) = self.patience {
            cfg.train.patience = p;
        }
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { common, training } => {
            let mut cfg = common.resolve()?;
            training.apply(&mut cfg);
            cfg.validate()?;
            let dir = commands::cmd_train(&cfg, common.output())?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Evaluate {
            common,
            checkpoint,
            split,
        } => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            commands::cmd_evaluate(&cfg, &checkpoint, split, common.output())?;
        }
        Command::Explain {
            common,
            checkpoint,
            index,
            method,
            split,
            segmentation,
            n_samples,
            lime_seed,
            format,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(s) = segmentation {
                cfg.explain.segmentation = s;
            }
            if let Some(n) = n_samples {
                cfg.explain.n_samples = n;
            }
            if let Some(s) = lime_seed {
                cfg.explain.seed = s;
            }
            cfg.validate()?;
            let args = ExplainArgs {
                checkpoint,
                index,
                method,
                split,
                format: format.into(),
            };
            for path in commands::cmd_explain(&cfg, &args, common.output())? {
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Rasterize {
            common,
            indices,
            split,
            format,
        } => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            let paths = commands::cmd_rasterize(&cfg, &indices, split, format.into())?;
            eprintln!("wrote {} image(s) to {}", paths.len(), cfg.resolve_out_dir().display());
        }
        Command::Info { common } => {
            commands::cmd_info(&common.resolve()?)?;
        }
        Command::Benchmark { common, training } => {
            let mut cfg = common.resolve()?;
            training.apply(&mut cfg);
            cfg.validate()?;
            commands::cmd_benchmark(&cfg, common.output())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.kind.exit_code())
        }
    }
}
