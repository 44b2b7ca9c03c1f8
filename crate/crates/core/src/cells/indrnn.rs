//! Independently recurrent network: `h' = τ(x·Wᵀ + u ⊙ h + b)` with a
//! per-unit recurrent weight vector `u`; `τ` defaults to relu.
//!
//! Manifest: `W` (H×I, uniform_fan), `u` (H, uniform on (0, 1]), `b` (H, zeros).

use super::{single, Activation, CellState, ParamDecl, MAT_HI, VEC_H};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::init::InitSpec;
use crate::tensor::Real;

pub(super) fn manifest() -> Vec<ParamDecl> {
    vec![
        ParamDecl {
            name: "W",
            shape: MAT_HI,
            init: InitSpec::UniformFan,
        },
        ParamDecl {
            name: "u",
            shape: VEC_H,
            init: InitSpec::Uniform {
                low: 0.0,
                high: 1.0,
            },
        },
        ParamDecl {
            name: "b",
            shape: VEC_H,
            init: InitSpec::Zeros,
        },
    ]
}

pub(super) fn step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    activation: Activation,
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let h = single(state)?;
    let pre = tape.add(tape.add(tape.matmul_bt(x, p[0])?, tape.mul(h, p[1])?)?, p[2])?;
    let h_next = activation.apply(tape, pre)?;
    Ok((h_next, CellState::Single(h_next)))
}
