use rand::Rng;
use serde::Serialize;

use super::{
    image_batch, series_batch, Architecture, Batch, FusionConfig, OutputHead, StudentConfig, TeacherConfig,
};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::GrayscaleImage;
use crate::params::{he_uniform, ParamId, ParamStore};
use crate::seed::stream_rng;
use crate::tensor::kernels::Padding;
use crate::tensor::Tensor;

/// Fully connected layer `x·W + b` with `W: in×out`.
#[derive(Clone, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
    inputs: usize,
    outputs: usize,
}

impl Dense {
    fn build(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), he_uniform(&[inputs, outputs], inputs, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]))?;
        Ok(Dense {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, track: bool) -> Result<Var> {
        let w = tape.param(store, self.weight, track);
        let b = tape.param(store, self.bias, track);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

fn output_units(head: OutputHead) -> usize {
    match head {
        OutputHead::Softmax => 2,
        OutputHead::Sigmoid => 1,
    }
}

/// Turns the output layer's activations into two logits.
fn head_logits(tape: &mut Tape, head: OutputHead, out: Var) -> Result<Var> {
    match head {
        OutputHead::Softmax => Ok(out),
        OutputHead::Sigmoid => {
            let rows = tape.value(out).shape()[0];
            let zero = tape.constant(Tensor::zeros(&[rows, 1]));
            tape.concat(zero, out)
        }
    }
}

#[derive(Clone, Debug)]
struct TeacherNet {
    hidden: Vec<Dense>,
    output: Option<Dense>,
}

impl TeacherNet {
    fn build(store: &mut ParamStore, cfg: &TeacherConfig, with_output: bool, rng: &mut impl Rng) -> Result<Self> {
        let mut hidden = Vec::new();
        let mut width = cfg.input_len;
        for (i, &h) in cfg.hidden.iter().enumerate() {
            hidden.push(Dense::build(store, &format!("teacher.dense{}", i + 1), width, h, rng)?);
            width = h;
        }
        let output = if with_output {
            Some(Dense::build(store, "teacher.out", width, output_units(cfg.head), rng)?)
        } else {
            None
        };
        Ok(TeacherNet { hidden, output })
    }

    /// Penultimate features.
    fn features(&self, tape: &mut Tape, store: &ParamStore, x: Var, track: bool) -> Result<Var> {
        let mut h = x;
        for layer in &self.hidden {
            let z = layer.forward(tape, store, h, track)?;
            h = tape.relu(z);
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
struct StudentNet {
    cfg: StudentConfig,
    conv_weight: ParamId,
    conv_bias: ParamId,
    hidden: Vec<Dense>,
    output: Option<Dense>,
}

impl StudentNet {
    fn build(store: &mut ParamStore, cfg: &StudentConfig, with_output: bool, rng: &mut impl Rng) -> Result<Self> {
        let k = cfg.kernel_size;
        let conv_weight = store.add("student.conv1.weight", he_uniform(&[cfg.filters, 1, k, k], k * k, rng))?;
        let conv_bias = store.add("student.conv1.bias", Tensor::zeros(&[cfg.filters]))?;
        let mut hidden = Vec::new();
        let mut width = cfg.flatten_width();
        for (i, &h) in cfg.hidden.iter().enumerate() {
            hidden.push(Dense::build(store, &format!("student.dense{}", i + 1), width, h, rng)?);
            width = h;
        }
        let output = if with_output {
            Some(Dense::build(store, "student.out", width, output_units(cfg.head), rng)?)
        } else {
            None
        };
        Ok(StudentNet {
            cfg: cfg.clone(),
            conv_weight,
            conv_bias,
            hidden,
            output,
        })
    }

    /// Returns `(pooled conv activations, penultimate features)`.
    ///
    /// With `detach_conv` the pooled activations are re-entered on the tape
    /// as a fresh gradient-tracked leaf, so a backward pass reaches them
    /// without differentiating the convolution itself.
    fn features(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        images: Var,
        track: bool,
        detach_conv: bool,
    ) -> Result<(Var, Var)> {
        let x = if self.cfg.rescale == 1.0 {
            images
        } else {
            tape.scale(images, self.cfg.rescale)
        };
        let k = tape.param(store, self.conv_weight, track);
        let b = tape.param(store, self.conv_bias, track);
        let conv = tape.conv2d(x, k, 1, Padding::Same)?;
        let conv = tape.add_channel_bias(conv, b)?;
        let act = tape.relu(conv);
        let mut pooled = tape.maxpool2d(act, self.cfg.pool)?;
        if detach_conv {
            let v = tape.value(pooled).clone();
            pooled = tape.variable(v);
        }
        let rows = tape.value(pooled).shape()[0];
        let mut h = tape.reshape(pooled, &[rows, self.cfg.flatten_width()])?;
        for layer in &self.hidden {
            let z = layer.forward(tape, store, h, track)?;
            h = tape.relu(z);
        }
        Ok((pooled, h))
    }
}

#[derive(Clone, Debug)]
enum Network {
    Teacher(TeacherNet),
    Student(StudentNet),
    Fusion {
        teacher: TeacherNet,
        student: StudentNet,
        head: Dense,
    },
}

/// Which network a [`Model`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Teacher,
    Student,
    Fusion,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Teacher => 1,
            ModelKind::Student => 2,
            ModelKind::Fusion => 3,
        }
    }
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    pub logits: Var,
    /// Pooled conv activations (`B×C×H'×W'`) when the model has an image branch.
    pub last_conv: Option<Var>,
}

/// One row of [`Model::summary`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerSummary {
    pub name: String,
    pub kind: String,
    pub detail: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

/// A classifier and its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    arch: Architecture,
    store: ParamStore,
    net: Network,
}

impl Model {
    /// Builds a freshly initialized model. Weights use seeded He-uniform
    /// initialization; biases start at zero.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let net = match &arch {
            Architecture::Teacher(cfg) => {
                let mut rng = stream_rng(seed, "init.teacher");
                Network::Teacher(TeacherNet::build(&mut store, cfg, true, &mut rng)?)
            }
            Architecture::Student(cfg) => {
                let mut rng = stream_rng(seed, "init.student");
                Network::Student(StudentNet::build(&mut store, cfg, true, &mut rng)?)
            }
            Architecture::Fusion(FusionConfig { teacher, student, head }) => {
                let t = TeacherNet::build(&mut store, teacher, false, &mut stream_rng(seed, "init.teacher"))?;
                let s = StudentNet::build(&mut store, student, false, &mut stream_rng(seed, "init.student"))?;
                let t_width = *teacher.hidden.last().expect("validated");
                let s_width = student.hidden.last().copied().unwrap_or(student.flatten_width());
                let h = Dense::build(
                    &mut store,
                    "fusion.out",
                    t_width + s_width,
                    output_units(*head),
                    &mut stream_rng(seed, "init.fusion"),
                )?;
                Network::Fusion {
                    teacher: t,
                    student: s,
                    head: h,
                }
            }
        };
        Ok(Model { arch, store, net })
    }

    pub fn teacher(cfg: TeacherConfig, seed: u64) -> Result<Self> {
        Self::new(Architecture::Teacher(cfg), seed)
    }

    pub fn student(cfg: StudentConfig, seed: u64) -> Result<Self> {
        Self::new(Architecture::Student(cfg), seed)
    }

    pub fn fusion(cfg: FusionConfig, seed: u64) -> Result<Self> {
        Self::new(Architecture::Fusion(cfg), seed)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn kind(&self) -> ModelKind {
        match self.net {
            Network::Teacher(_) => ModelKind::Teacher,
            Network::Student(_) => ModelKind::Student,
            Network::Fusion { .. } => ModelKind::Fusion,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn needs_series(&self) -> bool {
        self.arch.series_len().is_some()
    }

    pub fn needs_image(&self) -> bool {
        self.arch.image_size().is_some()
    }

    fn check_inputs(&self, series: Option<&Tensor>, images: Option<&Tensor>) -> Result<()> {
        if let Some(len) = self.arch.series_len() {
            let s = series.ok_or_else(|| Error::Input("model needs series input".into()))?;
            if s.rank() != 2 || s.shape()[1] != len {
                return Err(Error::shape("series input", s.shape(), &[s.shape()[0], len]));
            }
        }
        if let Some((h, w)) = self.arch.image_size() {
            let i = images.ok_or_else(|| Error::Input("model needs image input".into()))?;
            if i.rank() != 4 || i.shape()[1..] != [1, h, w] {
                return Err(Error::shape("image input", i.shape(), &[i.shape()[0], 1, h, w]));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. `series` must hold a `B×L`
    /// tensor and `images` a `B×1×H×W` tensor when the model uses them.
    /// With `track` the parameters are bound for gradient accumulation.
    pub fn forward(
        &self,
        tape: &mut Tape,
        series: Option<Var>,
        images: Option<Var>,
        track: bool,
    ) -> Result<ForwardOutputs> {
        self.forward_impl(tape, series, images, track, false)
    }

    fn forward_impl(
        &self,
        tape: &mut Tape,
        series: Option<Var>,
        images: Option<Var>,
        track: bool,
        detach_conv: bool,
    ) -> Result<ForwardOutputs> {
        self.check_inputs(series.map(|v| tape.value(v)), images.map(|v| tape.value(v)))?;
        let store = &self.store;
        match &self.net {
            Network::Teacher(t) => {
                let x = series.expect("checked");
                let h = t.features(tape, store, x, track)?;
                let out = t.output.as_ref().expect("standalone teacher").forward(tape, store, h, track)?;
                let logits = head_logits(tape, self.teacher_head(), out)?;
                Ok(ForwardOutputs {
                    logits,
                    last_conv: None,
                })
            }
            Network::Student(s) => {
                let x = images.expect("checked");
                let (pooled, h) = s.features(tape, store, x, track, detach_conv)?;
                let out = s.output.as_ref().expect("standalone student").forward(tape, store, h, track)?;
                let logits = head_logits(tape, s.cfg.head, out)?;
                Ok(ForwardOutputs {
                    logits,
                    last_conv: Some(pooled),
                })
            }
            Network::Fusion { teacher, student, head } => {
                let ht = teacher.features(tape, store, series.expect("checked"), track)?;
                let (pooled, hs) = student.features(tape, store, images.expect("checked"), track, detach_conv)?;
                let joint = tape.concat(ht, hs)?;
                let out = head.forward(tape, store, joint, track)?;
                let Architecture::Fusion(cfg) = &self.arch else {
                    unreachable!("fusion network with non-fusion architecture")
                };
                let logits = head_logits(tape, cfg.head, out)?;
                Ok(ForwardOutputs {
                    logits,
                    last_conv: Some(pooled),
                })
            }
        }
    }

    fn teacher_head(&self) -> OutputHead {
        match &self.arch {
            Architecture::Teacher(t) => t.head,
            Architecture::Student(s) => s.head,
            Architecture::Fusion(f) => f.head,
        }
    }

    /// Largest batch evaluated in one tape, bounded by conv activation size.
    fn inference_chunk(&self) -> usize {
        match self.arch.image_size() {
            Some((h, w)) => {
                let filters = match &self.arch {
                    Architecture::Student(s) => s.filters,
                    Architecture::Fusion(f) => f.student.filters,
                    Architecture::Teacher(_) => 1,
                };
                ((1usize << 22) / (filters * h * w).max(1)).clamp(1, 64)
            }
            None => 256,
        }
    }

    /// Logits (`B×2`) for a batch, without gradient tracking.
    pub fn logits(&self, batch: &Batch) -> Result<Tensor> {
        self.check_inputs(batch.series.as_ref(), batch.images.as_ref())?;
        let n = batch.len();
        let chunk = self.inference_chunk();
        let mut out = Vec::with_capacity(n * 2);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let mut tape = Tape::new();
            let s = batch.series.as_ref().map(|t| tape.constant(slice_rows(t, start, end)));
            let i = batch.images.as_ref().map(|t| tape.constant(slice_rows(t, start, end)));
            let f = self.forward(&mut tape, s, i, false)?;
            out.extend_from_slice(tape.value(f.logits).data());
            start = end;
        }
        Tensor::new(vec![n, 2], out)
    }

    /// Class probabilities (`B×2`) for a batch.
    pub fn predict_proba(&self, batch: &Batch) -> Result<Tensor> {
        Ok(crate::tensor::kernels::softmax(&self.logits(batch)?))
    }

    /// Forward pass for one sample that keeps the tape for a later gradient
    /// query on the pooled conv activations.
    pub fn trace(&self, series: Option<&[f64]>, image: &GrayscaleImage) -> Result<ForwardTrace> {
        if !self.needs_image() {
            return Err(Error::NoImageBranch);
        }
        let mut tape = Tape::new();
        let s = match series {
            Some(v) if self.needs_series() => Some(tape.constant(series_batch(&[v])?)),
            _ => None,
        };
        let i = tape.constant(image_batch(&[image])?);
        let f = self.forward_impl(&mut tape, s, Some(i), false, true)?;
        let probs = tape.softmax(f.logits);
        Ok(ForwardTrace {
            tape,
            logits: f.logits,
            probs,
            last_conv: f.last_conv.expect("image branch"),
            consumed: false,
        })
    }

    /// Per-layer report, in forward order.
    pub fn summary(&self) -> Vec<LayerSummary> {
        let mut rows = Vec::new();
        let p = |id: ParamId| self.store.value(id).len();
        let dense_rows = |rows: &mut Vec<LayerSummary>, layers: &[Dense], relu: bool| {
            for d in layers {
                rows.push(LayerSummary {
                    name: self.store.get(d.weight).name.trim_end_matches(".weight").to_string(),
                    kind: "dense".into(),
                    detail: format!("{} -> {}{}", d.inputs, d.outputs, if relu { ", relu" } else { "" }),
                    output_shape: vec![d.outputs],
                    params: p(d.weight) + p(d.bias),
                });
            }
        };
        let teacher_rows = |rows: &mut Vec<LayerSummary>, t: &TeacherNet, cfg: &TeacherConfig| {
            rows.push(LayerSummary {
                name: "teacher.input".into(),
                kind: "input".into(),
                detail: "series".into(),
                output_shape: vec![cfg.input_len],
                params: 0,
            });
            dense_rows(rows, &t.hidden, true);
        };
        let student_rows = |rows: &mut Vec<LayerSummary>, s: &StudentNet| {
            let c = &s.cfg;
            let (ph, pw) = c.feature_map_size();
            rows.push(LayerSummary {
                name: "student.input".into(),
                kind: "input".into(),
                detail: "image".into(),
                output_shape: vec![1, c.height, c.width],
                params: 0,
            });
            rows.push(LayerSummary {
                name: "student.rescale".into(),
                kind: "rescale".into(),
                detail: format!("x{}", c.rescale),
                output_shape: vec![1, c.height, c.width],
                params: 0,
            });
            rows.push(LayerSummary {
                name: "student.conv1".into(),
                kind: "conv2d".into(),
                detail: format!(
                    "{} filters {}x{}, stride 1, same, relu",
                    c.filters, c.kernel_size, c.kernel_size
                ),
                output_shape: vec![c.filters, c.height, c.width],
                params: p(s.conv_weight) + p(s.conv_bias),
            });
            rows.push(LayerSummary {
                name: "student.pool1".into(),
                kind: "maxpool2d".into(),
                detail: format!("{}x{}, stride {}", c.pool, c.pool, c.pool),
                output_shape: vec![c.filters, ph, pw],
                params: 0,
            });
            rows.push(LayerSummary {
                name: "student.flatten".into(),
                kind: "flatten".into(),
                detail: String::new(),
                output_shape: vec![c.flatten_width()],
                params: 0,
            });
            dense_rows(rows, &s.hidden, true);
        };
        let out_row = |rows: &mut Vec<LayerSummary>, d: &Dense, head: OutputHead| {
            rows.push(LayerSummary {
                name: self.store.get(d.weight).name.trim_end_matches(".weight").to_string(),
                kind: "output".into(),
                detail: format!("{} -> {}, {:?}", d.inputs, d.outputs, head).to_lowercase(),
                output_shape: vec![2],
                params: p(d.weight) + p(d.bias),
            });
        };
        match (&self.net, &self.arch) {
            (Network::Teacher(t), Architecture::Teacher(cfg)) => {
                teacher_rows(&mut rows, t, cfg);
                out_row(&mut rows, t.output.as_ref().expect("standalone"), cfg.head);
            }
            (Network::Student(s), Architecture::Student(cfg)) => {
                student_rows(&mut rows, s);
                out_row(&mut rows, s.output.as_ref().expect("standalone"), cfg.head);
            }
            (Network::Fusion { teacher, student, head }, Architecture::Fusion(cfg)) => {
                teacher_rows(&mut rows, teacher, &cfg.teacher);
                student_rows(&mut rows, student);
                rows.push(LayerSummary {
                    name: "fusion.concat".into(),
                    kind: "concat".into(),
                    detail: String::new(),
                    output_shape: vec![head.inputs],
                    params: 0,
                });
                out_row(&mut rows, head, cfg.head);
            }
            _ => unreachable!("network and architecture disagree"),
        }
        rows
    }
}

fn slice_rows(t: &Tensor, start: usize, end: usize) -> Tensor {
    let row: usize = t.shape()[1..].iter().product();
    let mut shape = t.shape().to_vec();
    shape[0] = end - start;
    Tensor::new(shape, t.data()[start * row..end * row].to_vec()).expect("row slice")
}

/// A single-sample forward pass retained for one gradient query.
#[derive(Debug)]
pub struct ForwardTrace {
    tape: Tape,
    logits: Var,
    probs: Var,
    last_conv: Var,
    consumed: bool,
}

impl ForwardTrace {
    pub fn logits(&self) -> [f64; 2] {
        let d = self.tape.value(self.logits).data();
        [d[0], d[1]]
    }

    pub fn probabilities(&self) -> [f64; 2] {
        let d = self.tape.value(self.probs).data();
        [d[0], d[1]]
    }

    pub fn predicted_class(&self) -> usize {
        let p = self.probabilities();
        usize::from(p[1] > p[0])
    }

    /// Pooled conv activations, `C×H'×W'`.
    pub fn last_conv_activations(&self) -> Tensor {
        let t = self.tape.value(self.last_conv);
        t.clone().reshape(&t.shape()[1..]).expect("drop batch axis")
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// `d logit[class] / d activations`, shaped `C×H'×W'`. A trace answers
    /// exactly one such query.
    pub fn class_gradient(&mut self, class: usize) -> Result<Tensor> {
        if self.consumed {
            return Err(Error::TraceConsumed);
        }
        if class > 1 {
            return Err(Error::Index(format!("class {class} of 2")));
        }
        self.consumed = true;
        let score = self.tape.pick(self.logits, class)?;
        let grads = self.tape.backward(score)?;
        let shape = self.tape.value(self.last_conv).shape()[1..].to_vec();
        let g = grads
            .get(self.last_conv)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.tape.value(self.last_conv).shape()));
        g.reshape(&shape)
    }
}
