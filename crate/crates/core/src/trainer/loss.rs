use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

/// Loss weighting for one (micro-)batch. `ce_share` and `kl_share` scale the
/// two terms so that summing micro-batch losses reproduces the full-batch
/// loss.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LossShares {
    pub ce: f64,
    pub kl: f64,
}

impl LossShares {
    pub const WHOLE: LossShares = LossShares { ce: 1.0, kl: 1.0 };
}

/// Softened teacher distribution `softmax(teacher_logits / T)`.
pub fn soft_targets(teacher_logits: &Tensor, temperature: f64) -> Tensor {
    kernels::softmax(&teacher_logits.map(|v| v / temperature))
}

/// `alpha · CE(softmax(s), y) + (1 − alpha) · T² · KL(softmax(t/T) ‖ softmax(s/T))`.
///
/// `teacher_logits` are constants; gradients flow to `student_logits` only.
pub fn distill_loss(
    tape: &mut Tape,
    student_logits: Var,
    teacher_logits: &Tensor,
    labels: &[usize],
    alpha: f64,
    temperature: f64,
) -> Result<Var> {
    if tape.value(student_logits).shape() != teacher_logits.shape() {
        return Err(Error::shape(
            "distill_loss",
            tape.value(student_logits).shape(),
            teacher_logits.shape(),
        ));
    }
    if temperature <= 0.0 {
        return Err(Error::Input(format!("temperature {temperature} must be positive")));
    }
    let targets = soft_targets(teacher_logits, temperature);
    combined_loss(
        tape,
        student_logits,
        labels,
        Some(&targets),
        alpha,
        temperature,
        None,
        LossShares::WHOLE,
    )
}

/// Cross-entropy plus optional soft-target KL term.
#[allow(clippy::too_many_arguments)]
pub(crate) fn combined_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    soft: Option<&Tensor>,
    alpha: f64,
    temperature: f64,
    class_weights: Option<&[f64]>,
    shares: LossShares,
) -> Result<Var> {
    let probs = tape.softmax(logits);
    let ce = tape.cross_entropy(probs, labels, class_weights)?;
    let Some(targets) = soft else {
        return Ok(if shares.ce == 1.0 { ce } else { tape.scale(ce, shares.ce) });
    };
    let softened = tape.scale(logits, 1.0 / temperature);
    let q = tape.softmax(softened);
    let kl = tape.kl_divergence(targets.clone(), q)?;
    let hard = tape.scale(ce, alpha * shares.ce);
    let soft_term = tape.scale(kl, (1.0 - alpha) * temperature * temperature * shares.kl);
    tape.add(hard, soft_term)
}
