//! Scalar training losses, both mean-reduced.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSpec {
    Mse,
    /// Raw logits `[N, classes]` against class indices.
    CrossEntropy { classes: usize },
}

/// `mean((p - y)²)` over every element.
pub fn mse<T: Real>(tape: &Tape<T>, predictions: Var, targets: &Tensor<T>) -> Result<Var> {
    let shape = tape.shape(predictions)?;
    if shape != targets.shape() {
        return Err(Error::dim("mse", &shape, targets.shape()));
    }
    let y = tape.constant(targets.clone())?;
    tape.mean(tape.square(tape.sub(predictions, y)?)?)
}

/// Mean over rows of `-log softmax(logits)[target]`; log-sum-exp is max-shifted.
pub fn cross_entropy<T: Real>(tape: &Tape<T>, logits: Var, targets: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits)?;
    let [rows, classes] = shape[..] else {
        return Err(Error::contract(format!("cross_entropy needs [N, C] logits, got {shape:?}")));
    };
    if targets.len() != rows {
        return Err(Error::dim("cross_entropy targets", &[rows], &[targets.len()]));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::contract(format!(
            "cross_entropy target {bad} outside 0..{classes}"
        )));
    }
    let picked = tape.gather(tape.log_softmax(logits)?, targets)?;
    tape.neg(tape.mean(picked)?)
}
