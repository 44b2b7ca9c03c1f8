//! Long expressive memory: two learned, bounded time steps drive a slow and
//! a fast state. State `(h, z)`, hyperparameter `Δt_max`.
//!
//! ```text
//! d₁ = Δt_max·σ(x·W₁ᵀ + h·U₁ᵀ + b₁)
//! d₂ = Δt_max·σ(x·W₂ᵀ + h·U₂ᵀ + b₂)
//! z' = (1 - d₁) ⊙ z + d₁ ⊙ tanh(x·W_zᵀ + h·U_zᵀ + b_z)
//! h' = (1 - d₂) ⊙ h + d₂ ⊙ tanh(x·W_hᵀ + z'·U_hᵀ + b_h)
//! ```

use super::{decl, double, lerp, CellState, ParamDecl, MAT_HH, MAT_HI, VEC_H};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Real;

pub(super) fn manifest() -> Vec<ParamDecl> {
    vec![
        decl("W_1", MAT_HI),
        decl("W_2", MAT_HI),
        decl("W_z", MAT_HI),
        decl("W_h", MAT_HI),
        decl("U_1", MAT_HH),
        decl("U_2", MAT_HH),
        decl("U_z", MAT_HH),
        decl("U_h", MAT_HH),
        decl("b_1", VEC_H),
        decl("b_2", VEC_H),
        decl("b_z", VEC_H),
        decl("b_h", VEC_H),
    ]
}

/// `[W_cat (1 2 z h), U_cat (1 2 z), b_cat (1 2 z h), U_h]`.
pub(super) fn prepare<T: Real>(tape: &Tape<T>, leaves: &[Var]) -> Result<Vec<Var>> {
    Ok(vec![
        tape.concat_rows(&leaves[0..4])?,
        tape.concat_rows(&leaves[4..7])?,
        tape.concat_rows(&leaves[8..12])?,
        leaves[7],
    ])
}

pub(super) fn step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    hidden: usize,
    dt_max: T,
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let (h, z) = double(state)?;
    let xp = tape.add(tape.matmul_bt(x, p[0])?, p[2])?;
    let hp = tape.matmul_bt(h, p[1])?;
    let xs = |k: usize| tape.slice_cols(xp, k * hidden..(k + 1) * hidden);
    let hs = |k: usize| tape.slice_cols(hp, k * hidden..(k + 1) * hidden);
    let d1 = tape.scale(tape.sigmoid(tape.add(xs(0)?, hs(0)?)?)?, dt_max)?;
    let d2 = tape.scale(tape.sigmoid(tape.add(xs(1)?, hs(1)?)?)?, dt_max)?;
    let z_target = tape.tanh(tape.add(xs(2)?, hs(2)?)?)?;
    let z_next = lerp(tape, d1, z, z_target)?;
    let h_target = tape.tanh(tape.add(xs(3)?, tape.matmul_bt(z_next, p[3])?)?)?;
    let h_next = lerp(tape, d2, h, h_target)?;
    Ok((h_next, CellState::Double(h_next, z_next)))
}
