//! Time-series classification through rendered line plots: a dense teacher
//! on raw series, a small CNN student on plot images, distillation and
//! fusion training, and Grad-CAM / LIME explanations of the student.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod image;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod params;
pub mod raster;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use dataset::{DatasetSplit, TimeSeriesRecord, UcrDataset};
pub use error::{Error, Result};
pub use explain::{Heatmap, LimeConfig, LimeExplanation, SegmentMask, SegmentStrategy};
pub use image::{GrayscaleImage, ImageFormat, RgbImage};
pub use metrics::{Decision, EvalReport};
pub use models::{Architecture, Model, ModelKind, OutputHead, StoragePrecision};
pub use raster::{PlotConfig, ValueRange};
pub use tensor::Tensor;
pub use trainer::{TrainConfig, TrainMode, TrainOutcome, TrainReport};
