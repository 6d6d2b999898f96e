//! The teacher dense network, the student CNN and their two-branch fusion.
//!
//! Student layer stack, in order: input `1×H×W` → rescale → conv (32
//! filters, 3×3, stride 1, same padding) → ReLU → max-pool 2×2 stride 2 →
//! flatten → dense (64, ReLU) → output dense (2 logits).

mod checkpoint;
mod network;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, StoragePrecision};
pub use network::{ForwardOutputs, ForwardTrace, LayerSummary, Model, ModelKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayscaleImage;
use crate::tensor::Tensor;

/// How the two class probabilities are produced from the last layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    /// Two logits followed by softmax.
    #[default]
    Softmax,
    /// One logit `z`; probabilities are `[1 - σ(z), σ(z)]`, i.e. softmax of `[0, z]`.
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub input_len: usize,
    pub hidden: Vec<usize>,
    pub head: OutputHead,
}

impl TeacherConfig {
    pub fn new(input_len: usize) -> Self {
        TeacherConfig {
            input_len,
            hidden: vec![256, 128],
            head: OutputHead::Softmax,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub height: usize,
    pub width: usize,
    /// Multiplicative input scaling (1/255 for 8-bit images).
    pub rescale: f64,
    pub filters: usize,
    pub kernel_size: usize,
    pub pool: usize,
    pub hidden: Vec<usize>,
    pub head: OutputHead,
}

impl StudentConfig {
    pub fn new(height: usize, width: usize) -> Self {
        StudentConfig {
            height,
            width,
            rescale: 1.0,
            filters: 32,
            kernel_size: 3,
            pool: 2,
            hidden: vec![64],
            head: OutputHead::Softmax,
        }
    }

    /// Spatial size of the pooled feature maps.
    pub fn feature_map_size(&self) -> (usize, usize) {
        (self.height.div_ceil(self.pool), self.width.div_ceil(self.pool))
    }

    pub fn flatten_width(&self) -> usize {
        let (h, w) = self.feature_map_size();
        self.filters * h * w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    pub head: OutputHead,
}

/// Declared architecture of a [`Model`]; stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Teacher(TeacherConfig),
    Student(StudentConfig),
    Fusion(FusionConfig),
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let check_hidden = |h: &[usize]| {
            if h.contains(&0) {
                Err(Error::Input("zero-width hidden layer".into()))
            } else {
                Ok(())
            }
        };
        let teacher = |t: &TeacherConfig| {
            if t.input_len == 0 {
                return Err(Error::Input("teacher input length is zero".into()));
            }
            check_hidden(&t.hidden)
        };
        let student = |s: &StudentConfig| {
            if s.height == 0 || s.width == 0 || s.filters == 0 || s.kernel_size == 0 || s.pool == 0 {
                return Err(Error::Input("student dimensions must be positive".into()));
            }
            check_hidden(&s.hidden)
        };
        match self {
            Architecture::Teacher(t) => teacher(t),
            Architecture::Student(s) => student(s),
            Architecture::Fusion(f) => {
                teacher(&f.teacher)?;
                student(&f.student)?;
                if f.teacher.hidden.is_empty() {
                    return Err(Error::Input("fusion teacher needs a hidden layer".into()));
                }
                Ok(())
            }
        }
    }

    pub fn series_len(&self) -> Option<usize> {
        match self {
            Architecture::Teacher(t) => Some(t.input_len),
            Architecture::Fusion(f) => Some(f.teacher.input_len),
            Architecture::Student(_) => None,
        }
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        match self {
            Architecture::Student(s) => Some((s.height, s.width)),
            Architecture::Fusion(f) => Some((f.student.height, f.student.width)),
            Architecture::Teacher(_) => None,
        }
    }
}

/// Stacks series into a `B×L` tensor.
pub fn series_batch(series: &[&[f64]]) -> Result<Tensor> {
    let len = series.first().map_or(0, |s| s.len());
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::Input("series in one batch differ in length".into()));
    }
    Tensor::new(vec![series.len(), len], series.iter().flat_map(|s| s.iter().copied()).collect())
}

/// Stacks images into a `B×1×H×W` tensor.
pub fn image_batch(images: &[&GrayscaleImage]) -> Result<Tensor> {
    let (h, w) = images.first().map_or((0, 0), |i| (i.height(), i.width()));
    if images.iter().any(|i| (i.height(), i.width()) != (h, w)) {
        return Err(Error::Input("images in one batch differ in size".into()));
    }
    Tensor::new(
        vec![images.len(), 1, h, w],
        images.iter().flat_map(|i| i.pixels().iter().copied()).collect(),
    )
}

/// Inputs for a batch of samples; which fields are required depends on the
/// model kind.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub series: Option<Tensor>,
    pub images: Option<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.series
            .as_ref()
            .or(self.images.as_ref())
            .map_or(0, |t| t.shape()[0])
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
