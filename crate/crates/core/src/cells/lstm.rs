//! Long short-term memory and two relatives sharing its gate structure.
//!
//! LSTM, state `(h, c)`:
//!
//! ```text
//! i  = σ(x·W_iᵀ + h·U_iᵀ + b_i)      f = σ(x·W_fᵀ + h·U_fᵀ + b_f)
//! g  = tanh(x·W_gᵀ + h·U_gᵀ + b_g)   o = σ(x·W_oᵀ + h·U_oᵀ + b_o)
//! c' = f ⊙ c + i ⊙ g                 h' = o ⊙ tanh(c')
//! ```
//!
//! The peephole variant adds `p_i ⊙ c` and `p_f ⊙ c` to the input and forget
//! pre-activations and `p_o ⊙ c'` to the output gate. The multiplicative
//! variant computes `m = (x·W_mxᵀ) ⊙ (h·W_mhᵀ)` and uses `m` in place of `h`
//! in all four gates.
//!
//! Manifest order: `W_i W_f W_g W_o U_i U_f U_g U_o b_i b_f b_g b_o`, then
//! `p_i p_f p_o` (peephole) or `W_mx W_mh` (multiplicative).
//! The four gates are evaluated as one fused projection per operand.

use super::{decl, double, CellState, ParamDecl, MAT_HH, MAT_HI, VEC_H};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Variant {
    Plain,
    Peephole,
    Multiplicative,
}

pub(super) fn manifest(variant: Variant) -> Vec<ParamDecl> {
    let mut m = vec![
        decl("W_i", MAT_HI),
        decl("W_f", MAT_HI),
        decl("W_g", MAT_HI),
        decl("W_o", MAT_HI),
        decl("U_i", MAT_HH),
        decl("U_f", MAT_HH),
        decl("U_g", MAT_HH),
        decl("U_o", MAT_HH),
        decl("b_i", VEC_H),
        decl("b_f", VEC_H),
        decl("b_g", VEC_H),
        decl("b_o", VEC_H),
    ];
    match variant {
        Variant::Plain => {}
        Variant::Peephole => m.extend([decl("p_i", VEC_H), decl("p_f", VEC_H), decl("p_o", VEC_H)]),
        Variant::Multiplicative => m.extend([decl("W_mx", MAT_HI), decl("W_mh", MAT_HH)]),
    }
    m
}

/// `[W_cat, U_cat, b_cat, extras...]` with the gate blocks stacked in `i f g o` order.
pub(super) fn prepare<T: Real>(tape: &Tape<T>, leaves: &[Var], _variant: Variant) -> Result<Vec<Var>> {
    let mut work = vec![
        tape.concat_rows(&leaves[0..4])?,
        tape.concat_rows(&leaves[4..8])?,
        tape.concat_rows(&leaves[8..12])?,
    ];
    work.extend_from_slice(&leaves[12..]);
    Ok(work)
}

pub(super) fn step<T: Real>(
    tape: &Tape<T>,
    p: &[Var],
    hidden: usize,
    variant: Variant,
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let (h, c) = double(state)?;
    let recurrent_in = match variant {
        Variant::Multiplicative => tape.mul(tape.matmul_bt(x, p[3])?, tape.matmul_bt(h, p[4])?)?,
        _ => h,
    };
    let pre = tape.add(
        tape.add(tape.matmul_bt(x, p[0])?, tape.matmul_bt(recurrent_in, p[1])?)?,
        p[2],
    )?;
    let block = |k: usize| tape.slice_cols(pre, k * hidden..(k + 1) * hidden);
    let (mut i_pre, mut f_pre, g_pre, mut o_pre) = (block(0)?, block(1)?, block(2)?, block(3)?);
    if variant == Variant::Peephole {
        i_pre = tape.add(i_pre, tape.mul(c, p[3])?)?;
        f_pre = tape.add(f_pre, tape.mul(c, p[4])?)?;
    }
    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let g = tape.tanh(g_pre)?;
    let c_next = tape.add(tape.mul(f, c)?, tape.mul(i, g)?)?;
    if variant == Variant::Peephole {
        o_pre = tape.add(o_pre, tape.mul(c_next, p[5])?)?;
    }
    let o = tape.sigmoid(o_pre)?;
    let h_next = tape.mul(o, tape.tanh(c_next)?)?;
    Ok((h_next, CellState::Double(h_next, c_next)))
}
