//! Antisymmetric RNN: forward-Euler step of an ODE whose Jacobian has
//! eigenvalues with (near) zero real part.
//!
//! ```text
//! A  = W - Wᵀ - γI
//! h' = h + ε·tanh(h·Aᵀ + x·Vᵀ + b)
//! ```
//!
//! `W` is drawn from `N(0, 1/H)`; `V` and `b` use the default uniform_fan.

use super::{decl, single, CellState, ParamDecl, MAT_HH, MAT_HI, VEC_H};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::init::InitSpec;
use crate::tensor::{Real, Tensor};

pub(super) fn manifest() -> Vec<ParamDecl> {
    vec![
        ParamDecl {
            name: "W",
            shape: MAT_HH,
            init: InitSpec::GaussianFan,
        },
        decl("V", MAT_HI),
        decl("b", VEC_H),
    ]
}

fn gamma_identity<T: Real>(hidden: usize, gamma: T) -> Tensor<T> {
    let mut eye = Tensor::zeros_unchecked(&[hidden, hidden]);
    for i in 0..hidden {
        eye.data_mut()[i * hidden + i] = gamma;
    }
    eye
}

/// `[A, V, b]` with `A = W - Wᵀ - γI` built on the tape.
pub(super) fn prepare<T: Real>(tape: &Tape<T>, leaves: &[Var], hidden: usize, gamma: f64) -> Result<Vec<Var>> {
    let w = leaves[0];
    let skew = tape.sub(w, tape.transpose(w)?)?;
    let damping = tape.constant(gamma_identity(hidden, T::from_f64_lossy(gamma)))?;
    Ok(vec![tape.sub(skew, damping)?, leaves[1], leaves[2]])
}

/// The effective recurrent matrix `W - Wᵀ - γI`, computed exactly as in the cell.
pub fn effective_matrix<T: Real>(w: &Tensor<T>, gamma: f64) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let hidden = w.shape()[0];
    let leaf = tape.constant(w.clone())?;
    let work = prepare(&tape, &[leaf, leaf, leaf], hidden, gamma)?;
    tape.value(work[0])
}

pub(super) fn step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    eps_step: T,
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let h = single(state)?;
    let pre = tape.add(
        tape.add(tape.matmul_bt(h, p[0])?, tape.matmul_bt(x, p[1])?)?,
        p[2],
    )?;
    let h_next = tape.add(h, tape.scale(tape.tanh(pre)?, eps_step)?)?;
    Ok((h_next, CellState::Single(h_next)))
}
