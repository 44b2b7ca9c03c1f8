//! GRU and its two lighter relatives, all single-state.
//!
//! GRU (reset applied after the recurrent projection):
//!
//! ```text
//! r  = σ(x·W_rᵀ + h·U_rᵀ + b_r)
//! z  = σ(x·W_zᵀ + h·U_zᵀ + b_z)
//! n  = tanh(x·W_nᵀ + b_n + r ⊙ (h·U_nᵀ + b_hn))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```
//!
//! MGU (one forget gate):
//!
//! ```text
//! f  = σ(x·W_fᵀ + h·U_fᵀ + b_f)
//! h̃  = tanh(x·W_hᵀ + (f ⊙ h)·U_hᵀ + b_h)
//! h' = (1 - f) ⊙ h + f ⊙ h̃
//! ```
//!
//! Light GRU (no reset gate, relu candidate, plain bias instead of batch norm):
//!
//! ```text
//! z  = σ(x·W_zᵀ + h·U_zᵀ + b_z)
//! h̃  = relu(x·W_hᵀ + h·U_hᵀ + b_h)
//! h' = z ⊙ h + (1 - z) ⊙ h̃
//! ```

use super::{decl, gate_pre, lerp, single, CellState, ParamDecl, MAT_HH, MAT_HI, VEC_H};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Real;

pub(super) fn gru_manifest() -> Vec<ParamDecl> {
    vec![
        decl("W_r", MAT_HI),
        decl("W_z", MAT_HI),
        decl("W_n", MAT_HI),
        decl("U_r", MAT_HH),
        decl("U_z", MAT_HH),
        decl("U_n", MAT_HH),
        decl("b_r", VEC_H),
        decl("b_z", VEC_H),
        decl("b_n", VEC_H),
        decl("b_hn", VEC_H),
    ]
}

/// `[W_cat, U_cat, b_cat (r z n), b_hn]`.
pub(super) fn gru_prepare<T: Real>(tape: &Tape<T>, leaves: &[Var]) -> Result<Vec<Var>> {
    Ok(vec![
        tape.concat_rows(&leaves[0..3])?,
        tape.concat_rows(&leaves[3..6])?,
        tape.concat_rows(&leaves[6..9])?,
        leaves[9],
    ])
}

pub(super) fn gru_step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    hidden: usize,
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let h = single(state)?;
    let xp = tape.add(tape.matmul_bt(x, p[0])?, p[2])?;
    let hp = tape.matmul_bt(h, p[1])?;
    let xs = |k: usize| tape.slice_cols(xp, k * hidden..(k + 1) * hidden);
    let hs = |k: usize| tape.slice_cols(hp, k * hidden..(k + 1) * hidden);
    let r = tape.sigmoid(tape.add(xs(0)?, hs(0)?)?)?;
    let z = tape.sigmoid(tape.add(xs(1)?, hs(1)?)?)?;
    let reset = tape.mul(r, tape.add(hs(2)?, p[3])?)?;
    let n = tape.tanh(tape.add(xs(2)?, reset)?)?;
    let h_next = lerp(tape, z, n, h)?;
    Ok((h_next, CellState::Single(h_next)))
}

pub(super) fn mgu_manifest() -> Vec<ParamDecl> {
    vec![
        decl("W_f", MAT_HI),
        decl("W_h", MAT_HI),
        decl("U_f", MAT_HH),
        decl("U_h", MAT_HH),
        decl("b_f", VEC_H),
        decl("b_h", VEC_H),
    ]
}

pub(super) fn mgu_step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let h = single(state)?;
    let f = tape.sigmoid(gate_pre(tape, x, p[0], h, p[2], p[4])?)?;
    let fh = tape.mul(f, h)?;
    let candidate = tape.tanh(gate_pre(tape, x, p[1], fh, p[3], p[5])?)?;
    let h_next = lerp(tape, f, h, candidate)?;
    Ok((h_next, CellState::Single(h_next)))
}

pub(super) fn ligru_manifest() -> Vec<ParamDecl> {
    vec![
        decl("W_z", MAT_HI),
        decl("W_h", MAT_HI),
        decl("U_z", MAT_HH),
        decl("U_h", MAT_HH),
        decl("b_z", VEC_H),
        decl("b_h", VEC_H),
    ]
}

pub(super) fn ligru_step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let h = single(state)?;
    let z = tape.sigmoid(gate_pre(tape, x, p[0], h, p[2], p[4])?)?;
    let candidate = tape.relu(gate_pre(tape, x, p[1], h, p[3], p[5])?)?;
    let h_next = lerp(tape, z, candidate, h)?;
    Ok((h_next, CellState::Single(h_next)))
}
