//! Generic contract checks for anything implementing [`Recurrent`].
//!
//! The same checks run unchanged over bare cells and wrapped components.

use super::{CellState, Mode, Recurrent};
use crate::autodiff::Tape;
use crate::error::Error;
use crate::rng::Rng;
use crate::tensor::Tensor;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| 2.0 * rng.next_uniform() - 1.0).collect())
        .expect("valid random shape")
}

fn fail(what: &str, detail: impl std::fmt::Display) -> String {
    format!("{what}: {detail}")
}

/// Runs one forward step from `state`, returning the output and next state as values.
fn forward(
    c: &dyn Recurrent<f64>,
    x: &Tensor<f64>,
    state: &CellState<Tensor<f64>>,
) -> crate::Result<(Tensor<f64>, CellState<Tensor<f64>>)> {
    let tape = Tape::new();
    let bound = c.bind(&tape)?;
    let xv = tape.constant(x.clone())?;
    let sv = state.try_map(|t| tape.constant(t.clone()))?;
    let (out, next) = c.step(&tape, &bound, xv, &sv, &mut Mode::Eval)?;
    Ok((tape.value(out)?, next.try_map(|&v| tape.value(v))?))
}

/// Checks manifest/parameter agreement, zero state, step shapes, determinism,
/// batch independence, gradient shapes and the input-width error.
pub fn check_recurrent(c: &dyn Recurrent<f64>, seed: u64) -> Result<(), String> {
    let name = c.describe();
    let mut rng = Rng::new(seed);
    let (i, h, batch) = (c.input_size(), c.output_size(), 3);

    let manifest = c.manifest();
    let params = c.parameters();
    if manifest.len() != params.len() {
        return Err(fail(&name, format!("{} manifest entries, {} parameters", manifest.len(), params.len())));
    }
    for (m, p) in manifest.iter().zip(&params) {
        if m.shape != p.shape() {
            return Err(fail(&name, format!("parameter {} has shape {:?}, manifest {:?}", m.name, p.shape(), m.shape)));
        }
    }

    let zero = c.zero_state(batch).map_err(|e| fail(&name, e))?;
    if !zero.matches_layout(&c.state_layout()) {
        return Err(fail(&name, "zero state does not match the declared layout"));
    }
    if zero.parts().len() != c.state_layout().names().len() {
        return Err(fail(&name, "zero state arity differs from layout"));
    }
    for part in zero.parts() {
        if part.shape() != [batch, h] || part.data().iter().any(|&v| v != 0.0) {
            return Err(fail(&name, format!("zero state part {:?} is not zeros of [{batch}, {h}]", part.shape())));
        }
    }

    let x = random(&[batch, i], &mut rng);
    let state = zero.map(|t| random(t.shape(), &mut rng));
    let (out, next) = forward(c, &x, &state).map_err(|e| fail(&name, e))?;
    if out.shape() != [batch, h] || !out.is_finite() {
        return Err(fail(&name, format!("output shape {:?} or non-finite values", out.shape())));
    }
    if !next.matches_layout(&c.state_layout()) || next.parts().iter().any(|p| p.shape() != [batch, h]) {
        return Err(fail(&name, "next state violates the layout"));
    }

    let (again, next_again) = forward(c, &x, &state).map_err(|e| fail(&name, e))?;
    if again != out || next_again != next {
        return Err(fail(&name, "forward is not deterministic"));
    }

    for b in 0..batch {
        let row = |t: &Tensor<f64>| {
            Tensor::from_vec(&[1, t.shape()[1]], t.data()[b * t.shape()[1]..(b + 1) * t.shape()[1]].to_vec())
                .expect("row")
        };
        let (o, _) = forward(c, &row(&x), &state.map(row)).map_err(|e| fail(&name, e))?;
        let diff = o.max_abs_diff(&row(&out)).unwrap_or(f64::INFINITY);
        if diff > 1e-12 {
            return Err(fail(&name, format!("row {b} differs from batched forward by {diff:e}")));
        }
    }

    let tape = Tape::new();
    let bound = c.bind(&tape).map_err(|e| fail(&name, e))?;
    let grads_ok = (|| -> crate::Result<bool> {
        let xv = tape.constant(x.clone())?;
        let sv = state.try_map(|t| tape.constant(t.clone()))?;
        let (o, _) = c.step(&tape, &bound, xv, &sv, &mut Mode::Eval)?;
        tape.backward(tape.sum(o)?)?;
        for (leaf, p) in bound.leaves.iter().zip(&params) {
            if tape.grad(*leaf)?.shape() != p.shape() {
                return Ok(false);
            }
        }
        Ok(bound.leaves.len() == params.len())
    })()
    .map_err(|e| fail(&name, e))?;
    if !grads_ok {
        return Err(fail(&name, "gradients do not line up with parameters"));
    }

    let wrong = random(&[batch, i + 1], &mut rng);
    match forward(c, &wrong, &state) {
        Err(Error::Dimension { .. }) => Ok(()),
        other => Err(fail(&name, format!("wrong input width gave {other:?}"))),
    }
}
