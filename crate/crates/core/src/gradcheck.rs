//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::cells::{prepare, Bound, Cell, CellKind, CellSpec, Mode, Recurrent};
use crate::error::{Error, Result};
use crate::layers::scan;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// `(analytic, numeric)` at `worst`.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    /// Coordinates whose ±ε bracket crosses a relu kink; their derivative is
    /// undefined and they are left out of `max_rel_error`.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of the scalar program `f` with central
/// differences `(f(θ+ε) - f(θ-ε)) / 2ε`, one coordinate at a time.
///
/// `f` receives the tape and one leaf per entry of `params` and must return a
/// shape-`[1]` node.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("grad_check step must be positive, got {eps}")));
    }
    let tape = Tape::new();
    let leaves = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let root = f(&tape, &leaves)?;
    tape.backward(root)?;
    let analytic = leaves
        .iter()
        .map(|&l| tape.grad(l))
        .collect::<Result<Vec<_>>>()?;

    let eval = |values: &[Tensor<f64>]| -> Result<(f64, Vec<bool>)> {
        let tape = Tape::new();
        let vars = values
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&tape, &vars)?;
        Ok((tape.value(out)?.data()[0], tape.relu_pattern()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        checked: 0,
        skipped: 0,
    };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for ci in 0..params[pi].len() {
            let original = params[pi].data()[ci];
            work[pi].data_mut()[ci] = original + eps;
            let (plus, pattern_plus) = eval(&work)?;
            work[pi].data_mut()[ci] = original - eps;
            let (minus, pattern_minus) = eval(&work)?;
            work[pi].data_mut()[ci] = original;
            if pattern_plus != pattern_minus {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grad.data()[ci], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, ci));
                report.worst_values = Some((grad.data()[ci], numeric));
            }
        }
    }
    Ok(report)
}

/// Problem sizes for [`scan_grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanSizes {
    pub steps: usize,
    pub batch: usize,
    pub input: usize,
    pub hidden: usize,
}

impl Default for ScanSizes {
    fn default() -> Self {
        ScanSizes {
            steps: 4,
            batch: 2,
            input: 4,
            hidden: 4,
        }
    }
}

/// Checks `mean(outputs)` of a full scan against central differences, over
/// every cell parameter and a random initial state. Parameters, inputs and
/// the state are drawn from `seed`.
pub fn scan_grad_check(kind: CellKind, sizes: ScanSizes, eps: f64, seed: u64) -> Result<GradCheckReport> {
    let spec = CellSpec::new(kind, sizes.input, sizes.hidden)?;
    let root = Rng::new(seed);
    let cell = Cell::<f64>::new(spec, &mut root.split(0))?;
    let mut rng = root.split(1);
    let mut uniform = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| 2.0 * rng.next_uniform() - 1.0).collect())
    };
    let data = uniform(&[sizes.steps, sizes.batch, sizes.input])?;
    let state0 = cell.zero_state(sizes.batch)?.try_map(|z| uniform(z.shape()))?;
    let n = cell.params().len();
    let mut checked: Vec<Tensor<f64>> = cell.params().tensors().to_vec();
    checked.extend(state0.parts().into_iter().cloned());
    grad_check(
        |tape, vars| {
            let leaves = vars[..n].to_vec();
            let work = prepare(&spec, tape, &leaves)?;
            let bound = Bound { leaves, work };
            let inputs = (0..sizes.steps)
                .map(|s| tape.constant(data.outer(s)?))
                .collect::<Result<Vec<_>>>()?;
            let mut parts = vars[n..].iter();
            let state = state0.map(|_| *parts.next().unwrap());
            let out = scan(&cell, tape, &bound, &inputs, None, state, &mut Mode::Eval)?;
            tape.mean(tape.concat_rows(&out.outputs)?)
        },
        &checked,
        eps,
    )
}
