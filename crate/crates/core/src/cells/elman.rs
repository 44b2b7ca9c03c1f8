//! Elman network: `h' = τ(x·Wᵀ + h·Uᵀ + b)`, `τ ∈ {tanh, relu}`.

use super::{decl, gate_pre, single, Activation, CellState, ParamDecl, MAT_HH, MAT_HI, VEC_H};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Real;

pub(super) fn manifest() -> Vec<ParamDecl> {
    vec![decl("W", MAT_HI), decl("U", MAT_HH), decl("b", VEC_H)]
}

pub(super) fn step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    activation: Activation,
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let h = single(state)?;
    let h_next = activation.apply(tape, gate_pre(tape, x, p[0], h, p[1], p[2])?)?;
    Ok((h_next, CellState::Single(h_next)))
}
