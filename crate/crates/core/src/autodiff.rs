//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Operations are recorded in execution order; [`Tape::backward`] walks the
//! records in exact reverse order and accumulates gradients into buffers that
//! start at zero.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::kernels::{self, Padding};
use crate::tensor::Tensor;

/// Lower clamp for probabilities fed to logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias { x: Var, bias: Var },
    AddChannelBias { x: Var, bias: Var },
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Conv2d { input: Var, kernel: Var, stride: usize, padding: Padding },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    Reshape(Var),
    Concat(Var, Var),
    Pick { x: Var, index: usize },
    Sum(Var),
    CrossEntropy { probs: Var, labels: Vec<usize>, weights: Vec<f64> },
    KlDivergence { target: Tensor, q: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Copies a parameter onto the tape. When `track` is set the leaf is
    /// bound to the parameter so [`Gradients::accumulate_into`] can route its
    /// gradient back to the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, track: bool) -> Var {
        let v = self.leaf(store.value(id).clone(), track);
        if track {
            self.bindings.push((id, v));
        }
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x[.., N] + bias[N]`, broadcasting over leading axes.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = bv.len();
        if xv.shape().last() != Some(&n) || bv.rank() != 1 {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias { x, bias }, &[x, bias]))
    }

    /// `x[N×C×H×W] + bias[C]` (or `x[C×H×W]`).
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let r = xv.rank();
        if r < 3 || bv.rank() != 1 || xv.shape()[r - 3] != bv.len() {
            return Err(Error::shape("add_channel_bias", xv.shape(), bv.shape()));
        }
        let plane = xv.shape()[r - 2] * xv.shape()[r - 1];
        let c = bv.len();
        let mut out = xv.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let b = bv.data()[i % c];
            for v in chunk {
                *v += b;
            }
        }
        Ok(self.push(out, Op::AddChannelBias { x, bias }, &[x, bias]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::relu);
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = kernels::softmax(self.value(x));
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let out = kernels::conv2d(self.value(input), self.value(kernel), stride, padding)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
            &[input, kernel],
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, pool: usize) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d(self.value(input), pool)?;
        Ok(self.push(out, Op::MaxPool2d { input, argmax }, &[input]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Concatenates two rank-2 tensors along their last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let ([ra, ca], [rb, cb]) = (av.shape(), bv.shape()) else {
            return Err(Error::shape("concat", av.shape(), bv.shape()));
        };
        if ra != rb {
            return Err(Error::shape("concat", av.shape(), bv.shape()));
        }
        let (rows, ca, cb) = (*ra, *ca, *cb);
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor::new(vec![rows, ca + cb], data)?;
        Ok(self.push(out, Op::Concat(a, b), &[a, b]))
    }

    /// The element at flat `index`, as a one-element tensor.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        if index >= xv.len() {
            return Err(Error::Index(format!("pick {index} from {:?}", xv.shape())));
        }
        let out = Tensor::scalar(xv.data()[index]);
        Ok(self.push(out, Op::Pick { x, index }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// Mean negative log-likelihood of `labels` under row-stochastic
    /// `probs[B×C]`, with probabilities clamped to `[1e-12, 1]`.
    ///
    /// `class_weights`, when given, weights each sample by its label's weight
    /// and normalizes by the total weight.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize], class_weights: Option<&[f64]>) -> Result<Var> {
        let pv = self.value(probs);
        let [b, c] = *pv.shape() else {
            return Err(Error::shape("cross_entropy", pv.shape(), &[labels.len()]));
        };
        if b != labels.len() {
            return Err(Error::shape("cross_entropy", pv.shape(), &[labels.len()]));
        }
        for r in 0..b {
            let s: f64 = pv.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Input(format!("probability row {r} sums to {s}")));
            }
        }
        let mut weights = Vec::with_capacity(b);
        for &l in labels {
            if l >= c {
                return Err(Error::Index(format!("label {l} out of range for {c} classes")));
            }
            weights.push(class_weights.map_or(1.0, |w| w[l]));
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let mut loss = 0.0;
        for (r, (&l, &w)) in labels.iter().zip(&weights).enumerate() {
            let p = pv.row(r)[l].clamp(PROB_FLOOR, 1.0);
            loss += -w * p.ln();
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
                weights,
            },
            &[probs],
        ))
    }

    /// Batch-mean `KL(target ‖ q)` for row-stochastic `target` and `q`.
    /// `target` is a constant; only `q` receives a gradient.
    pub fn kl_divergence(&mut self, target: Tensor, q: Var) -> Result<Var> {
        let qv = self.value(q);
        if qv.shape() != target.shape() || qv.rank() != 2 {
            return Err(Error::shape("kl_divergence", target.shape(), qv.shape()));
        }
        let b = qv.shape()[0] as f64;
        let mut loss = 0.0;
        for (&p, &qq) in target.data().iter().zip(qv.data()) {
            if p > 0.0 {
                loss += p * (p.ln() - qq.max(PROB_FLOOR).ln());
            }
        }
        Ok(self.push(Tensor::scalar(loss / b), Op::KlDivergence { target, q }, &[q]))
    }

    /// Gradients of the one-element `root` with respect to every recorded value.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward", self.value(root).shape(), &[1]));
        }
        self.backward_with(root, Tensor::full(self.value(root).shape(), 1.0))
    }

    /// Backward pass seeded with an explicit upstream gradient for `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::shape("backward", seed.shape(), self.value(root).shape()));
        }
        let mut grads = Gradients {
            grads: vec![None; self.nodes.len()],
        };
        grads.accumulate(self, root, &seed)?;
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads.grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads)?;
            grads.grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut Gradients) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let ga = kernels::matmul_nt(g, self.value(*b))?;
                    grads.accumulate(self, *a, &ga)?;
                }
                if self.needs(*b) {
                    let gb = kernels::matmul_tn(self.value(*a), g)?;
                    grads.accumulate(self, *b, &gb)?;
                }
            }
            Op::AddBias { x, bias } => {
                if self.needs(*x) {
                    grads.accumulate(self, *x, g)?;
                }
                if self.needs(*bias) {
                    let n = self.value(*bias).len();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    grads.accumulate(self, *bias, &Tensor::vector(gb))?;
                }
            }
            Op::AddChannelBias { x, bias } => {
                if self.needs(*x) {
                    grads.accumulate(self, *x, g)?;
                }
                if self.needs(*bias) {
                    let c = self.value(*bias).len();
                    let r = g.rank();
                    let plane = g.shape()[r - 2] * g.shape()[r - 1];
                    let mut gb = vec![0.0; c];
                    for (i, chunk) in g.data().chunks(plane).enumerate() {
                        gb[i % c] += chunk.iter().sum::<f64>();
                    }
                    grads.accumulate(self, *bias, &Tensor::vector(gb))?;
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        grads.accumulate(self, *v, g)?;
                    }
                }
            }
            Op::Scale(x, f) => {
                grads.accumulate(self, *x, &g.map(|v| v * f))?;
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (d, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
                grads.accumulate(self, *x, &gx)?;
            }
            Op::Sigmoid(x) => {
                let mut gx = g.clone();
                for (d, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= y * (1.0 - y);
                }
                grads.accumulate(self, *x, &gx)?;
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let cols = *y.shape().last().expect("rank >= 1");
                let mut gx = g.clone();
                for (grow, yrow) in gx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (d, &yy) in grow.iter_mut().zip(yrow) {
                        *d = yy * (*d - dot);
                    }
                }
                grads.accumulate(self, *x, &gx)?;
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let need_input = self.needs(*input);
                let (gx, gk) = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *stride,
                    *padding,
                    need_input,
                )?;
                if let Some(gx) = gx {
                    grads.accumulate(self, *input, &gx)?;
                }
                if self.needs(*kernel) {
                    grads.accumulate(self, *kernel, &gk)?;
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let gx = kernels::maxpool2d_backward(self.value(*input).shape(), argmax, g)?;
                grads.accumulate(self, *input, &gx)?;
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.value(*x).shape())?;
                grads.accumulate(self, *x, &gx)?;
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).shape()[1];
                let cb = self.value(*b).shape()[1];
                let rows = g.shape()[0];
                let (mut ga, mut gb) = (Vec::with_capacity(rows * ca), Vec::with_capacity(rows * cb));
                for row in g.data().chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                if self.needs(*a) {
                    grads.accumulate(self, *a, &Tensor::new(vec![rows, ca], ga)?)?;
                }
                if self.needs(*b) {
                    grads.accumulate(self, *b, &Tensor::new(vec![rows, cb], gb)?)?;
                }
            }
            Op::Pick { x, index } => {
                let mut gx = Tensor::zeros(self.value(*x).shape());
                gx.data_mut()[*index] = g.item();
                grads.accumulate(self, *x, &gx)?;
            }
            Op::Sum(x) => {
                let gx = Tensor::full(self.value(*x).shape(), g.item());
                grads.accumulate(self, *x, &gx)?;
            }
            Op::CrossEntropy { probs, labels, weights } => {
                let pv = self.value(*probs);
                let c = pv.shape()[1];
                let mut gp = Tensor::zeros(pv.shape());
                let upstream = g.item();
                for (r, (&l, &w)) in labels.iter().zip(weights).enumerate() {
                    let p = pv.data()[r * c + l];
                    if p >= PROB_FLOOR {
                        gp.data_mut()[r * c + l] = -upstream * w / p;
                    }
                }
                grads.accumulate(self, *probs, &gp)?;
            }
            Op::KlDivergence { target, q } => {
                let qv = self.value(*q);
                let scale = g.item() / qv.shape()[0] as f64;
                let mut gq = Tensor::zeros(qv.shape());
                for ((d, &p), &qq) in gq.data_mut().iter_mut().zip(target.data()).zip(qv.data()) {
                    if qq >= PROB_FLOOR {
                        *d = -scale * p / qq;
                    }
                }
                grads.accumulate(self, *q, &gq)?;
            }
        }
        Ok(())
    }
}

/// Result of a backward pass: one optional gradient per recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    fn accumulate(&mut self, tape: &Tape, v: Var, g: &Tensor) -> Result<()> {
        let slot = &mut self.grads[v.0];
        let buf = slot.get_or_insert_with(|| Tensor::zeros(tape.value(v).shape()));
        buf.add_assign(g)
    }

    /// Gradient for `v`, or `None` if no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds the gradients of every bound parameter leaf into `store`.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        for &(id, v) in &tape.bindings {
            if let Some(g) = self.get(v) {
                store.grad_mut(id).add_assign(g)?;
            }
        }
        Ok(())
    }
}
