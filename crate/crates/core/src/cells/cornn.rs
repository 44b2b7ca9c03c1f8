//! Coupled oscillatory RNN: explicit-Euler discretization of a damped,
//! driven oscillator network with state `(y, z)`.
//!
//! ```text
//! z' = z + Δt·(tanh(y·Wᵀ + z·W̃ᵀ + x·Vᵀ + b) - γ·y - ε·z)
//! y' = y + Δt·z'
//! ```
//!
//! The output is `y'`.

use super::{decl, CellState, ParamDecl, MAT_HH, MAT_HI, VEC_H};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

pub(super) fn manifest() -> Vec<ParamDecl> {
    vec![
        decl("W", MAT_HH),
        decl("W_tilde", MAT_HH),
        decl("V", MAT_HI),
        decl("b", VEC_H),
    ]
}

pub(super) fn step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    dt: T,
    gamma: T,
    epsilon: T,
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let (y, z) = match state {
        CellState::Custom(parts) if parts.len() == 2 => (parts[0].1, parts[1].1),
        _ => return Err(Error::contract("cornn expects a custom (y, z) state")),
    };
    let drive = tape.add(
        tape.add(tape.matmul_bt(y, p[0])?, tape.matmul_bt(z, p[1])?)?,
        tape.add(tape.matmul_bt(x, p[2])?, p[3])?,
    )?;
    let accel = tape.add(
        tape.tanh(drive)?,
        tape.add(tape.scale(y, -gamma)?, tape.scale(z, -epsilon)?)?,
    )?;
    let z_next = tape.add(z, tape.scale(accel, dt)?)?;
    let y_next = tape.add(y, tape.scale(z_next, dt)?)?;
    Ok((y_next, CellState::Custom(vec![("y", y_next), ("z", z_next)])))
}
