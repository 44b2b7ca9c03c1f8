//! Synthetic long-memory benchmarks: the adding problem and copy memory.
//!
//! All tensors are time-major `[T, B, F]`. Copy targets are class indices in
//! time-major order (`t * B + b`).

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::loss;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub const COPY_SYMBOLS: usize = 8;
pub const COPY_BLANK: usize = 8;
pub const COPY_GO: usize = 9;
pub const COPY_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Sum the two marked values of a length-`steps` sequence.
    Adding { steps: usize },
    /// Reproduce `k` symbols after `blank` blanks and a go marker.
    Copy { blank: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T: Real = f64> {
    /// `[B, 1]`.
    Regression(Tensor<T>),
    /// `T·B` class indices, time-major.
    Classes(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch<T: Real = f64> {
    pub inputs: Tensor<T>,
    pub targets: Targets<T>,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Adding { .. } => "adding",
            TaskKind::Copy { .. } => "copy",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskKind::Adding { steps } if steps < 2 => {
                Err(Error::contract(format!("adding task needs T ≥ 2, got {steps}")))
            }
            TaskKind::Copy { blank, k } if blank < 1 || k < 1 => Err(Error::contract(format!(
                "copy task needs T_blank ≥ 1 and K ≥ 1, got {blank} and {k}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn sequence_length(&self) -> usize {
        match *self {
            TaskKind::Adding { steps } => steps,
            TaskKind::Copy { blank, k } => 2 * k + blank + 1,
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            TaskKind::Adding { .. } => 2,
            TaskKind::Copy { .. } => COPY_CLASSES,
        }
    }

    pub fn output_size(&self) -> usize {
        match self {
            TaskKind::Adding { .. } => 1,
            TaskKind::Copy { .. } => COPY_CLASSES,
        }
    }

    /// Emits a prediction at every step (copy) or only at the last (adding).
    pub fn predicts_every_step(&self) -> bool {
        matches!(self, TaskKind::Copy { .. })
    }

    pub fn generate<T: Real>(&self, batch: usize, rng: &mut Rng) -> Result<TaskBatch<T>> {
        self.validate()?;
        match *self {
            TaskKind::Adding { steps } => gen_adding(steps, batch, rng),
            TaskKind::Copy { blank, k } => gen_copy(blank, k, batch, rng),
        }
    }

    /// Training loss on the model outputs: `[B, 1]` for adding,
    /// `[T·B, 10]` logits for copy.
    pub fn loss<T: Real>(&self, tape: &Tape<T>, outputs: Var, targets: &Targets<T>) -> Result<Var> {
        match (self, targets) {
            (TaskKind::Adding { .. }, Targets::Regression(y)) => loss::mse(tape, outputs, y),
            (TaskKind::Copy { .. }, Targets::Classes(y)) => loss::cross_entropy(tape, outputs, y),
            _ => Err(Error::contract(format!("{} task given mismatched targets", self.name()))),
        }
    }
}

/// Inputs `[T, B, 2]`: channel 0 uniform on `[0, 1)`, channel 1 marks one
/// position in each half. Targets `[B, 1]` hold the sum of the marked values.
pub fn gen_adding<T: Real>(steps: usize, batch: usize, rng: &mut Rng) -> Result<TaskBatch<T>> {
    if steps < 2 {
        return Err(Error::contract(format!("adding task needs T ≥ 2, got {steps}")));
    }
    let half = steps / 2;
    let mut inputs = vec![0.0f64; steps * batch * 2];
    let mut targets = Vec::with_capacity(batch);
    for b in 0..batch {
        for t in 0..steps {
            inputs[(t * batch + b) * 2] = rng.next_uniform();
        }
        let first = rng.below(half);
        let second = half + rng.below(steps - half);
        let mut sum = 0.0;
        for m in [first, second] {
            inputs[(m * batch + b) * 2 + 1] = 1.0;
            sum += inputs[(m * batch + b) * 2];
        }
        targets.push(sum);
    }
    Ok(TaskBatch {
        inputs: Tensor::from_f64(&[steps, batch, 2], &inputs)?,
        targets: Targets::Regression(Tensor::from_f64(&[batch, 1], &targets)?),
    })
}

/// Symbol sequence per row: `k` symbols from `0..8`, `blank` blanks, go,
/// `k` blanks. Inputs are one-hot `[T, B, 10]`; targets are blank except the
/// last `k` steps, which repeat the leading symbols.
pub fn gen_copy<T: Real>(blank: usize, k: usize, batch: usize, rng: &mut Rng) -> Result<TaskBatch<T>> {
    if blank < 1 || k < 1 {
        return Err(Error::contract(format!(
            "copy task needs T_blank ≥ 1 and K ≥ 1, got {blank} and {k}"
        )));
    }
    let steps = 2 * k + blank + 1;
    let mut inputs = vec![0.0f64; steps * batch * COPY_CLASSES];
    let mut targets = vec![COPY_BLANK; steps * batch];
    for b in 0..batch {
        let symbols: Vec<usize> = (0..k).map(|_| rng.below(COPY_SYMBOLS)).collect();
        for t in 0..steps {
            let token = if t < k {
                symbols[t]
            } else if t == k + blank {
                COPY_GO
            } else {
                COPY_BLANK
            };
            inputs[(t * batch + b) * COPY_CLASSES + token] = 1.0;
        }
        for (j, &s) in symbols.iter().enumerate() {
            targets[(steps - k + j) * batch + b] = s;
        }
    }
    Ok(TaskBatch {
        inputs: Tensor::from_f64(&[steps, batch, COPY_CLASSES], &inputs)?,
        targets: Targets::Classes(targets),
    })
}

/// Row-wise argmax of `[N, C]` scores.
pub fn argmax_rows<T: Real>(scores: &Tensor<T>) -> Vec<usize> {
    let (rows, cols) = scores.as_matrix_dims();
    (0..rows)
        .map(|r| {
            let row = &scores.data()[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of correct predictions over the last `k` of `steps` time steps.
pub fn copy_accuracy(predicted: &[usize], targets: &[usize], steps: usize, batch: usize, k: usize) -> f64 {
    let from = (steps - k) * batch;
    let hits = predicted[from..]
        .iter()
        .zip(&targets[from..])
        .filter(|(p, t)| p == t)
        .count();
    hits as f64 / (k * batch) as f64
}

pub fn mean_squared_error(predicted: &[f64], targets: &[f64]) -> f64 {
    let n = predicted.len().max(1) as f64;
    predicted
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n
}

/// Adding: MSE of the `[B, 1]` predictions. Copy: suffix accuracy of the
/// argmax of the `[T·B, 10]` logits.
pub fn task_metric<T: Real>(kind: &TaskKind, outputs: &Tensor<T>, targets: &Targets<T>) -> Result<f64> {
    match (*kind, targets) {
        (TaskKind::Adding { .. }, Targets::Regression(y)) => {
            if outputs.shape() != y.shape() {
                return Err(Error::dim("adding metric", y.shape(), outputs.shape()));
            }
            Ok(mean_squared_error(&outputs.to_f64_vec(), &y.to_f64_vec()))
        }
        (TaskKind::Copy { k, .. }, Targets::Classes(y)) => {
            let steps = kind.sequence_length();
            let (rows, _) = outputs.as_matrix_dims();
            if rows != y.len() || rows % steps != 0 {
                return Err(Error::dim("copy metric", &[y.len()], &[rows]));
            }
            Ok(copy_accuracy(&argmax_rows(outputs), y, steps, rows / steps, k))
        }
        _ => Err(Error::contract(format!("{} task given mismatched targets", kind.name()))),
    }
}

/// Monte-Carlo MSE of the constant predictor `ŷ = 1` on the adding task.
pub fn adding_constant_baseline(steps: usize, samples: usize, rng: &mut Rng) -> Result<f64> {
    let batch = gen_adding::<f64>(steps, samples, rng)?;
    let Targets::Regression(y) = batch.targets else {
        unreachable!("adding targets are regression targets")
    };
    Ok(y.data().iter().map(|t| (1.0 - t).powi(2)).sum::<f64>() / samples as f64)
}

/// Monte-Carlo mean cross-entropy of the memoryless copy predictor: certain
/// of blank outside the suffix, uniform over the 8 symbols inside it.
pub fn copy_memoryless_baseline(blank: usize, k: usize, samples: usize, rng: &mut Rng) -> Result<f64> {
    let batch = gen_copy::<f64>(blank, k, samples, rng)?;
    let Targets::Classes(y) = batch.targets else {
        unreachable!("copy targets are class targets")
    };
    let steps = 2 * k + blank + 1;
    let suffix_from = (steps - k) * samples;
    let mut logits = vec![-1e4; y.len() * COPY_CLASSES];
    for row in 0..y.len() {
        let cells = &mut logits[row * COPY_CLASSES..(row + 1) * COPY_CLASSES];
        if row >= suffix_from {
            cells[..COPY_SYMBOLS].iter_mut().for_each(|v| *v = 0.0);
        } else {
            cells[COPY_BLANK] = 0.0;
        }
    }
    let tape = Tape::new();
    let z = tape.constant(Tensor::matrix(y.len(), COPY_CLASSES, logits)?)?;
    let l = loss::cross_entropy(&tape, z, &y)?;
    Ok(tape.value(l)?.data()[0])
}

/// Monte-Carlo suffix accuracy of uniform random guesses over the 8 symbols.
pub fn copy_random_suffix_accuracy(blank: usize, k: usize, samples: usize, rng: &mut Rng) -> Result<f64> {
    let batch = gen_copy::<f64>(blank, k, samples, rng)?;
    let Targets::Classes(y) = batch.targets else {
        unreachable!("copy targets are class targets")
    };
    let guesses: Vec<usize> = (0..y.len()).map(|_| rng.below(COPY_SYMBOLS)).collect();
    Ok(copy_accuracy(&guesses, &y, 2 * k + blank + 1, samples, k))
}
