//! Named correctness checks shared by the unit-style suites and the
//! acceptance report. Each returns a measured error; callers hold the
//! tolerance.

use rand::Rng;
use tsxd_core::autodiff::{Tape, Var};
use tsxd_core::explain::{explain_black_box, raw_cam, LimeConfig};
use tsxd_core::models::{FusionConfig, OutputHead, StudentConfig, TeacherConfig};
use tsxd_core::tensor::kernels::{self, Padding};
use tsxd_core::{GrayscaleImage, Model, Result, Tensor};

use super::{gradient_error, project, random_tensor, rng, FD_STEP};

pub const SEEDS: u64 = 20;
/// Relative gap between one-sided differences above which the probe
/// straddles a non-differentiable point.
pub const KINK_TOLERANCE: f64 = 1e-3;

/// A gradient check: seed → largest relative error.
pub struct GradCase {
    pub name: String,
    pub run: Box<dyn Fn(u64) -> f64 + Sync>,
}

impl GradCase {
    fn new(name: impl Into<String>, run: impl Fn(u64) -> f64 + Sync + 'static) -> Self {
        GradCase {
            name: name.into(),
            run: Box::new(run),
        }
    }

    /// Worst error over seeds `0..SEEDS`.
    pub fn worst(&self) -> (f64, u64) {
        (0..SEEDS)
            .map(|s| ((self.run)(s), s))
            .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
    }
}

fn primitive<I, F>(name: impl Into<String>, inputs: I, f: F) -> GradCase
where
    I: Fn(u64) -> Vec<Tensor> + Sync + 'static,
    F: Fn(&mut Tape, &[Var], u64) -> Result<Var> + Sync + 'static,
{
    GradCase::new(name, move |s| gradient_error(&inputs(s), None, |t, v| f(t, v, s)))
}

fn pair(a: [usize; 2], b: &'static [usize]) -> impl Fn(u64) -> Vec<Tensor> + Sync {
    move |s| {
        let mut r = rng(s);
        vec![random_tensor(&a, &mut r, -1.0, 1.0), random_tensor(b, &mut r, -1.0, 1.0)]
    }
}

const LABELS: [usize; 5] = [0, 1, 1, 0, 1];

fn logits(s: u64) -> Vec<Tensor> {
    vec![random_tensor(&[5, 2], &mut rng(s), -2.0, 2.0)]
}

fn activations(s: u64) -> Vec<Tensor> {
    vec![random_tensor(&[4, 6], &mut rng(s), -2.0, 2.0)]
}

/// Every differentiable primitive, each behind a random projection.
pub fn primitive_cases() -> Vec<GradCase> {
    let mut cases = vec![
        primitive("matmul", pair([3, 4], &[4, 2]), |t, v, s| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, s)
        }),
        primitive("add_bias/scale/add", pair([3, 5], &[5]), |t, v, s| {
            let y = t.add_bias(v[0], v[1])?;
            let z = t.scale(y, -1.7);
            let w = t.add(z, v[0])?;
            project(t, w, s)
        }),
        primitive(
            "add_channel_bias",
            |s| {
                let mut r = rng(s);
                vec![random_tensor(&[2, 3, 4, 4], &mut r, -1.0, 1.0), random_tensor(&[3], &mut r, -1.0, 1.0)]
            },
            |t, v, s| {
                let y = t.add_channel_bias(v[0], v[1])?;
                project(t, y, s)
            },
        ),
        primitive("relu", activations, |t, v, s| {
            let y = t.relu(v[0]);
            project(t, y, s)
        }),
        primitive("sigmoid", activations, |t, v, s| {
            let y = t.sigmoid(v[0]);
            project(t, y, s)
        }),
        primitive("softmax", activations, |t, v, s| {
            let y = t.softmax(v[0]);
            project(t, y, s)
        }),
        primitive("reshape/concat/pick", pair([2, 3], &[2, 4]), |t, v, s| {
            let c = t.concat(v[0], v[1])?;
            let r = t.reshape(c, &[7, 2])?;
            let p = t.pick(r, 5)?;
            let q = project(t, r, s)?;
            t.add(p, q)
        }),
        primitive("cross_entropy", logits, |t, v, _| {
            let p = t.softmax(v[0]);
            t.cross_entropy(p, &LABELS, None)
        }),
        primitive("weighted cross_entropy", logits, |t, v, _| {
            let p = t.softmax(v[0]);
            t.cross_entropy(p, &LABELS, Some(&[0.8, 1.3]))
        }),
        primitive("kl_divergence", logits, |t, v, s| {
            let target = kernels::softmax(&random_tensor(&[5, 2], &mut rng(s + 100), -2.0, 2.0));
            let q = t.softmax(v[0]);
            t.kl_divergence(target, q)
        }),
        primitive("distill_loss", logits, |t, v, s| {
            let teacher = random_tensor(&[5, 2], &mut rng(s + 200), -2.0, 2.0);
            tsxd_core::trainer::distill_loss(t, v[0], &teacher, &LABELS, 0.3, 2.5)
        }),
    ];
    for (stride, padding) in [(1, Padding::Same), (1, Padding::Valid), (2, Padding::Same), (2, Padding::Valid)] {
        cases.push(primitive(
            format!("conv2d stride {stride} {padding:?}"),
            |s| {
                let mut r = rng(s);
                vec![random_tensor(&[2, 2, 7, 6], &mut r, -1.0, 1.0), random_tensor(&[3, 2, 3, 3], &mut r, -1.0, 1.0)]
            },
            move |t, v, s| {
                let y = t.conv2d(v[0], v[1], stride, padding)?;
                project(t, y, s)
            },
        ));
    }
    for shape in [[1, 2, 6, 6], [2, 1, 5, 7]] {
        cases.push(primitive(
            format!("maxpool2d {shape:?}"),
            move |s| vec![random_tensor(&shape, &mut rng(s), -1.0, 1.0)],
            |t, v, s| {
                let y = t.maxpool2d(v[0], 2)?;
                project(t, y, s)
            },
        ));
    }
    cases
}

/// Checks `per_param` random coordinates of every parameter tensor of
/// `model` under a cross-entropy loss on a random batch.
pub fn model_gradient_error(
    model: &Model,
    series: Option<&Tensor>,
    images: Option<&Tensor>,
    labels: &[usize],
    seed: u64,
    per_param: usize,
) -> f64 {
    let loss = |m: &Model, track: bool| {
        let mut tape = Tape::new();
        let s = series.map(|t| tape.constant(t.clone()));
        let i = images.map(|t| tape.constant(t.clone()));
        let out = m.forward(&mut tape, s, i, track).unwrap();
        let p = tape.softmax(out.logits);
        let l = tape.cross_entropy(p, labels, None).unwrap();
        (tape, l)
    };
    let mut m = model.clone();
    m.params_mut().zero_grad();
    let (tape, l) = loss(&m, true);
    tape.backward(l).unwrap().accumulate_into(&tape, m.params_mut()).unwrap();
    let analytic = m.params().clone();
    let mut r = rng(seed ^ 0xabc);
    let value = |m: &Model| {
        let (t, l) = loss(m, false);
        t.value(l).item()
    };
    let centre = value(model);
    let mut worst: f64 = 0.0;
    for id in analytic.ids() {
        let n = analytic.value(id).len();
        let mut checked = 0;
        let mut attempts = 0;
        while checked < per_param.min(n) {
            attempts += 1;
            assert!(attempts <= 4 * per_param, "too many kinks in {}", analytic.get(id).name);
            let j = r.gen_range(0..n);
            let a = analytic.grad(id).data()[j];
            let mut probe = model.clone();
            probe.params_mut().value_mut(id).data_mut()[j] += FD_STEP;
            let up = value(&probe);
            probe.params_mut().value_mut(id).data_mut()[j] -= 2.0 * FD_STEP;
            let down = value(&probe);
            let forward = (up - centre) / FD_STEP;
            let backward = (centre - down) / FD_STEP;
            if (forward - backward).abs() > KINK_TOLERANCE * forward.abs().max(backward.abs()).max(1e-2) {
                // a ReLU or max-pool switch lies inside [w - h, w + h]
                continue;
            }
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            checked += 1;
        }
    }
    worst
}

pub fn random_labels(n: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed ^ 0x1abe1);
    (0..n).map(|_| r.gen_range(0..2)).collect()
}

/// Biases start at zero; randomize them so ReLU kinks are not aligned.
pub fn jitter_params(model: &mut Model, seed: u64) {
    let mut r = rng(seed ^ 0xb1a5);
    for p in model.params_mut().iter_mut() {
        if p.name.ends_with(".bias") {
            p.value.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.1..0.1));
        }
    }
}

/// Full networks: teacher, student at 16×16 (small and default widths) and
/// fusion, plus the teacher's input gradient.
pub fn network_cases() -> Vec<GradCase> {
    vec![
        GradCase::new("teacher network", |seed| {
            let cfg = TeacherConfig {
                input_len: 12,
                hidden: vec![10, 6],
                head: OutputHead::Softmax,
            };
            let mut model = Model::teacher(cfg, seed).unwrap();
            jitter_params(&mut model, seed);
            let x = random_tensor(&[4, 12], &mut rng(seed), -1.0, 1.0);
            model_gradient_error(&model, Some(&x), None, &random_labels(4, seed), seed, 5)
        }),
        GradCase::new("teacher input", |seed| {
            let model = Model::teacher(TeacherConfig::new(16), seed).unwrap();
            let x = random_tensor(&[1, 16], &mut rng(seed), -1.0, 1.0);
            gradient_error(&[x], None, |t, v| {
                let out = model.forward(t, Some(v[0]), None, false)?;
                t.pick(out.logits, 0)
            })
        }),
        GradCase::new("student network 16x16", |seed| {
            let cfg = StudentConfig {
                filters: 4,
                hidden: vec![8],
                ..StudentConfig::new(16, 16)
            };
            let mut model = Model::student(cfg, seed).unwrap();
            jitter_params(&mut model, seed);
            let images = random_tensor(&[2, 1, 16, 16], &mut rng(seed), 0.0, 1.0);
            model_gradient_error(&model, None, Some(&images), &random_labels(2, seed), seed, 5)
        }),
        // 32 filters, dense 64: the default layer widths on a small canvas
        GradCase::new("default-width student 16x16", |seed| {
            let mut model = Model::student(StudentConfig::new(16, 16), seed).unwrap();
            jitter_params(&mut model, seed);
            let images = random_tensor(&[1, 1, 16, 16], &mut rng(seed), 0.0, 1.0);
            model_gradient_error(&model, None, Some(&images), &random_labels(1, seed), seed, 5)
        }),
        GradCase::new("fusion network", |seed| {
            let cfg = FusionConfig {
                teacher: TeacherConfig {
                    input_len: 10,
                    hidden: vec![6, 4],
                    head: OutputHead::Softmax,
                },
                student: StudentConfig {
                    filters: 3,
                    hidden: vec![5],
                    ..StudentConfig::new(8, 8)
                },
                head: OutputHead::Sigmoid,
            };
            let mut model = Model::fusion(cfg, seed).unwrap();
            jitter_params(&mut model, seed);
            let mut r = rng(seed);
            let series = random_tensor(&[3, 10], &mut r, -1.0, 1.0);
            let images = random_tensor(&[3, 1, 8, 8], &mut r, 0.0, 1.0);
            model_gradient_error(&model, Some(&series), Some(&images), &random_labels(3, seed), seed, 5)
        }),
    ]
}

/// Student with one conv filter, no hidden layer, and a head whose `class`
/// column holds `head_weight(row)`; every other column is zero.
pub fn one_channel_student(size: usize, class: usize, head_weight: impl Fn(usize) -> f64) -> Model {
    let cfg = StudentConfig {
        filters: 1,
        hidden: vec![],
        ..StudentConfig::new(size, size)
    };
    let mut model = Model::student(cfg, 11).unwrap();
    let store = model.params_mut();
    let id = store.find("student.out.weight").unwrap();
    let w = store.value_mut(id);
    let outputs = w.shape()[1];
    for (i, v) in w.data_mut().iter_mut().enumerate() {
        let (row, col) = (i / outputs, i % outputs);
        *v = if col == class { head_weight(row) } else { 0.0 };
    }
    model
}

pub fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect()
}

/// Largest elementwise gap between the pre-upsampling Grad-CAM map of a
/// one-channel network with a positive head and min-max(ReLU(activation)).
pub fn gradcam_closed_form_error(seed: u64, class: usize) -> f64 {
    let model = one_channel_student(16, class, |r| 0.5 + ((r * 7 + seed as usize) % 5) as f64 / 10.0);
    let image = GrayscaleImage::new(16, 16, random_tensor(&[256], &mut rng(seed), 0.0, 1.0).into_data()).unwrap();
    let mut trace = model.trace(None, &image).unwrap();
    let acts = trace.last_conv_activations();
    let grads = trace.class_gradient(class).unwrap();
    let cam = raw_cam(&acts, &grads).unwrap().normalized();
    let oracle = min_max(&acts.data().iter().map(|&a| a.max(0.0)).collect::<Vec<_>>());
    cam.values().iter().zip(&oracle).map(|(c, o)| (c - o).abs()).fold(0.0, f64::max)
}

/// Runs LIME against a black box whose probability is 1 iff segment
/// `planted` is on; returns the top-ranked segment.
pub fn planted_lime_top1(segments: usize, planted: usize, n_samples: usize, seed: u64) -> usize {
    let cfg = LimeConfig {
        n_samples,
        seed,
        ..LimeConfig::default()
    };
    let expl = explain_black_box(segments, &cfg, 1, |zs| {
        Ok(zs.iter().map(|z| if z[planted] { 1.0 } else { 0.0 }).collect())
    })
    .unwrap();
    expl.ranking()[0]
}
