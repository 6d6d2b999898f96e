//! Independent reference implementations and a finite-difference checker.
#![allow(dead_code)]

pub mod checks;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsxd_core::autodiff::{Tape, Var};
use tsxd_core::tensor::kernels::Padding;
use tsxd_core::{Result, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Row-major `(M×K)·(K×N)` with the inner sum ascending in `k`.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// Direct cross-correlation on `C×H×W` input; sum ordered by `(c, ki, kj)`.
pub fn naive_conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: Padding) -> Tensor {
    let [c_in, h, w] = input.shape() else { panic!("rank 3 input") };
    let [c_out, _, kh, kw] = kernel.shape() else { panic!("rank 4 kernel") };
    let (c_in, h, w, c_out, kh, kw) = (*c_in, *h, *w, *c_out, *kh, *kw);
    let (ph, pw) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
    };
    let oh = (h + 2 * ph - kh) / stride + 1;
    let ow = (w + 2 * pw - kw) / stride + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for c in 0..c_in {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let iy = (y * stride + ki) as isize - ph as isize;
                            let ix = (x * stride + kj) as isize - pw as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let v = input.data()[(c * h + iy as usize) * w + ix as usize];
                            acc += v * kernel.data()[((o * c_in + c) * kh + ki) * kw + kj];
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out).unwrap()
}

/// 2×2 stride-2 window scan with −∞ beyond odd edges; returns values and
/// the flat index of the first maximum per window.
pub fn naive_maxpool(input: &Tensor) -> (Tensor, Vec<usize>) {
    let [c, h, w] = input.shape() else { panic!("rank 3 input") };
    let (c, h, w) = (*c, *h, *w);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::new();
    let mut arg = Vec::new();
    for p in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut cells = Vec::new();
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (iy, ix) = (2 * y + dy, 2 * x + dx);
                        let v = if iy < h && ix < w { input.data()[(p * h + iy) * w + ix] } else { f64::NEG_INFINITY };
                        cells.push(((p * h + iy) * w + ix, v));
                    }
                }
                let max = cells.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
                let first = cells.iter().find(|c| c.1 == max).unwrap();
                out.push(first.1);
                arg.push(first.0);
            }
        }
    }
    (Tensor::new(vec![c, oh, ow], out).unwrap(), arg)
}

/// Tallies `[true][pred]` counts one pair at a time.
pub fn brute_confusion(labels: &[usize], predictions: &[usize]) -> [[u64; 2]; 2] {
    let mut m = [[0u64; 2]; 2];
    for t in 0..2 {
        for p in 0..2 {
            for (l, q) in labels.iter().zip(predictions) {
                if *l == t && *q == p {
                    m[t][p] += 1;
                }
            }
        }
    }
    m
}

/// Reduces any tensor to a scalar through a fixed random linear projection,
/// so every output element contributes a distinct gradient.
pub fn project(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let n = tape.value(x).len();
    let flat = tape.reshape(x, &[1, n])?;
    let r = random_tensor(&[n, 1], &mut rng(seed ^ 0x5eed), -1.0, 1.0);
    let rv = tape.constant(r);
    let y = tape.matmul(flat, rv)?;
    Ok(tape.sum(y))
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between tape gradients and central differences
/// over the listed `(input, flat index)` coordinates. `None` checks every
/// coordinate of every input.
pub fn gradient_error(
    inputs: &[Tensor],
    coords: Option<&[(usize, usize)]>,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let eval = |values: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        (tape, vars, out)
    };
    let (tape, vars, out) = eval(inputs);
    let grads = tape.backward(out).unwrap();
    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };
    let mut worst: f64 = 0.0;
    for &(i, j) in coords {
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[j]);
        let mut shifted = inputs.to_vec();
        shifted[i].data_mut()[j] += FD_STEP;
        let (t1, _, o1) = eval(&shifted);
        shifted[i].data_mut()[j] -= 2.0 * FD_STEP;
        let (t2, _, o2) = eval(&shifted);
        let numeric = (t1.value(o1).item() - t2.value(o2).item()) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic, numeric));
    }
    worst
}
