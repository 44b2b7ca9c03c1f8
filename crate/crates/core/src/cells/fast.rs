//! FastRNN and FastGRNN: single-state cells with trainable scalar mixing gates.
//!
//! FastRNN: `h̃ = tanh(x·Wᵀ + h·Uᵀ + b)`, `h' = σ(α)·h̃ + σ(β)·h`, with raw
//! scalars initialized to `α = -3`, `β = 3`.
//!
//! FastGRNN shares one projection between gate and candidate:
//!
//! ```text
//! p  = x·Wᵀ + h·Uᵀ
//! z  = σ(p + b_z)        h̃ = tanh(p + b_h)
//! h' = (σ(ζ)·(1 - z) + σ(ν)) ⊙ h̃ + z ⊙ h
//! ```
//!
//! with `ζ = 1`, `ν = -4` initially.

use super::{decl, gate_pre, single, CellState, ParamDecl, MAT_HH, MAT_HI, SCALAR, VEC_H};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::init::InitSpec;
use crate::tensor::Real;

const fn scalar(name: &'static str, init: f64) -> ParamDecl {
    ParamDecl {
        name,
        shape: SCALAR,
        init: InitSpec::Constant(init),
    }
}

pub(super) fn fastrnn_manifest() -> Vec<ParamDecl> {
    vec![
        decl("W", MAT_HI),
        decl("U", MAT_HH),
        decl("b", VEC_H),
        scalar("alpha", -3.0),
        scalar("beta", 3.0),
    ]
}

pub(super) fn fastrnn_step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let h = single(state)?;
    let candidate = tape.tanh(gate_pre(tape, x, p[0], h, p[1], p[2])?)?;
    let alpha = tape.scalar_gate(p[3])?;
    let beta = tape.scalar_gate(p[4])?;
    let h_next = tape.add(tape.mul(candidate, alpha)?, tape.mul(h, beta)?)?;
    Ok((h_next, CellState::Single(h_next)))
}

pub(super) fn fastgrnn_manifest() -> Vec<ParamDecl> {
    vec![
        decl("W", MAT_HI),
        decl("U", MAT_HH),
        decl("b_z", VEC_H),
        decl("b_h", VEC_H),
        scalar("zeta", 1.0),
        scalar("nu", -4.0),
    ]
}

pub(super) fn fastgrnn_step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let h = single(state)?;
    let shared = tape.add(tape.matmul_bt(x, p[0])?, tape.matmul_bt(h, p[1])?)?;
    let z = tape.sigmoid(tape.add(shared, p[2])?)?;
    let candidate = tape.tanh(tape.add(shared, p[3])?)?;
    let zeta = tape.scalar_gate(p[4])?;
    let nu = tape.scalar_gate(p[5])?;
    let mix = tape.add(tape.mul(tape.one_minus(z)?, zeta)?, nu)?;
    let h_next = tape.add(tape.mul(mix, candidate)?, tape.mul(z, h)?)?;
    Ok((h_next, CellState::Single(h_next)))
}
