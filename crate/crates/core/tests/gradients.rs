mod support;

use support::checks::{network_cases, primitive_cases, GradCase, SEEDS};
use support::{gradient_error, random_tensor, rng, FD_TOLERANCE};
use tsxd_core::autodiff::Tape;
use tsxd_core::models::{FusionConfig, OutputHead, StudentConfig, TeacherConfig};
use tsxd_core::Model;

fn assert_cases(cases: Vec<GradCase>, filter: impl Fn(&str) -> bool) {
    let mut ran = 0;
    for case in cases.iter().filter(|c| filter(&c.name)) {
        for seed in 0..SEEDS {
            let err = (case.run)(seed);
            assert!(err <= FD_TOLERANCE, "{} seed {seed}: relative error {err:e}", case.name);
        }
        ran += 1;
    }
    assert!(ran > 0);
}

#[test]
fn dense_and_activation_gradients() {
    assert_cases(primitive_cases(), |n| !n.starts_with("conv2d") && !n.starts_with("maxpool"));
}

#[test]
fn conv_gradients() {
    assert_cases(primitive_cases(), |n| n.starts_with("conv2d"));
}

#[test]
fn maxpool_gradients() {
    assert_cases(primitive_cases(), |n| n.starts_with("maxpool"));
}

#[test]
fn teacher_network_gradients() {
    assert_cases(network_cases(), |n| n.starts_with("teacher"));
}

#[test]
fn student_network_gradients_16x16() {
    assert_cases(network_cases(), |n| n.contains("student"));
}

#[test]
fn fusion_network_gradients() {
    assert_cases(network_cases(), |n| n.starts_with("fusion"));
}

#[test]
fn sum_of_matmul_tight_tolerance() {
    // the linear case needs no curvature allowance
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let inputs = vec![random_tensor(&[3, 4], &mut r, -1.0, 1.0), random_tensor(&[4, 2], &mut r, -1.0, 1.0)];
        let err = gradient_error(&inputs, None, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            Ok(t.sum(y))
        });
        assert!(err <= 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn tape_replay_is_bitwise_deterministic() {
    let model = Model::student(StudentConfig::new(16, 16), 7).unwrap();
    let images = random_tensor(&[2, 1, 16, 16], &mut rng(7), 0.0, 1.0);
    let run = || {
        let mut m = model.clone();
        m.params_mut().zero_grad();
        let mut tape = Tape::new();
        let i = tape.constant(images.clone());
        let out = m.forward(&mut tape, None, Some(i), true).unwrap();
        let p = tape.softmax(out.logits);
        let l = tape.cross_entropy(p, &[0, 1], None).unwrap();
        tape.backward(l).unwrap().accumulate_into(&tape, m.params_mut()).unwrap();
        let grads: Vec<Vec<u64>> = m.params().iter().map(|p| p.grad.data().iter().map(|v| v.to_bits()).collect()).collect();
        (tape.value(l).item().to_bits(), grads)
    };
    assert_eq!(run(), run());
}

#[test]
fn fusion_gradient_reaches_both_branches() {
    let cfg = FusionConfig {
        teacher: TeacherConfig::new(20),
        student: StudentConfig::new(16, 16),
        head: OutputHead::Softmax,
    };
    let mut model = Model::fusion(cfg, 3).unwrap();
    let mut r = rng(3);
    let series = random_tensor(&[4, 20], &mut r, -1.0, 1.0);
    let images = random_tensor(&[4, 1, 16, 16], &mut r, 0.0, 1.0);
    let mut tape = Tape::new();
    let s = tape.constant(series);
    let i = tape.constant(images);
    let out = model.forward(&mut tape, Some(s), Some(i), true).unwrap();
    let p = tape.softmax(out.logits);
    let l = tape.cross_entropy(p, &[0, 1, 0, 1], None).unwrap();
    model.params_mut().zero_grad();
    tape.backward(l).unwrap().accumulate_into(&tape, model.params_mut()).unwrap();
    for name in ["teacher.dense1.weight", "student.conv1.weight", "fusion.out.weight"] {
        let id = model.params().find(name).unwrap_or_else(|| panic!("{name}"));
        assert!(model.params().grad(id).data().iter().any(|&g| g != 0.0), "{name}");
    }
}
