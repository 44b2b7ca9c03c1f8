//! Plain-loop reference implementations of every cell, written against raw
//! `Vec<f64>` rows with no tape, fusion or broadcasting.

#![allow(dead_code)]

use recurrent::cells::Activation;
use recurrent::{Cell, CellKind, CellState, Tensor};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct P<'a>(&'a Cell<f64>);

impl P<'_> {
    fn t(&self, name: &str) -> &[f64] {
        self.0.params().get(name).unwrap_or_else(|| panic!("no {name}")).data()
    }

    /// `W·v` for `W` of shape `[rows, v.len()]`.
    fn mv(&self, name: &str, v: &[f64]) -> Vec<f64> {
        let w = self.t(name);
        let cols = v.len();
        (0..w.len() / cols)
            .map(|r| (0..cols).map(|c| w[r * cols + c] * v[c]).sum())
            .collect()
    }

    fn scalar(&self, name: &str) -> f64 {
        self.t(name)[0]
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn map(a: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    a.iter().map(|&v| f(v)).collect()
}

fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Tanh => v.tanh(),
        Activation::Relu => v.max(0.0),
    }
}

/// `W_x·x + U_h·h + b`.
fn pre(p: &P, w: &str, x: &[f64], u: &str, h: &[f64], b: &str) -> Vec<f64> {
    add(&add(&p.mv(w, x), &p.mv(u, h)), p.t(b))
}

/// `(1-g)·a + g·b`.
fn lerp(g: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..g.len()).map(|k| (1.0 - g[k]) * a[k] + g[k] * b[k]).collect()
}

/// One step for a single batch row. `state` holds the parts in layout order.
pub fn step(cell: &Cell<f64>, x: &[f64], state: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = P(cell);
    let next: Vec<Vec<f64>> = match cell.spec().kind {
        CellKind::Elman { activation } => {
            vec![map(&pre(&p, "W", x, "U", &state[0], "b"), |v| act(activation, v))]
        }
        CellKind::Lstm | CellKind::PeepholeLstm | CellKind::Mlstm => {
            let kind = cell.spec().kind;
            let (h, c) = (&state[0], &state[1]);
            let r = if kind == CellKind::Mlstm {
                mul(&p.mv("W_mx", x), &p.mv("W_mh", h))
            } else {
                h.clone()
            };
            let mut i = pre(&p, "W_i", x, "U_i", &r, "b_i");
            let mut f = pre(&p, "W_f", x, "U_f", &r, "b_f");
            let g = map(&pre(&p, "W_g", x, "U_g", &r, "b_g"), f64::tanh);
            let mut o = pre(&p, "W_o", x, "U_o", &r, "b_o");
            if kind == CellKind::PeepholeLstm {
                i = add(&i, &mul(p.t("p_i"), c));
                f = add(&f, &mul(p.t("p_f"), c));
            }
            let (i, f) = (map(&i, sigmoid), map(&f, sigmoid));
            let c2 = add(&mul(&f, c), &mul(&i, &g));
            if kind == CellKind::PeepholeLstm {
                o = add(&o, &mul(p.t("p_o"), &c2));
            }
            let h2 = mul(&map(&o, sigmoid), &map(&c2, f64::tanh));
            vec![h2, c2]
        }
        CellKind::Gru => {
            let h = &state[0];
            let r = map(&pre(&p, "W_r", x, "U_r", h, "b_r"), sigmoid);
            let z = map(&pre(&p, "W_z", x, "U_z", h, "b_z"), sigmoid);
            let hn = add(&p.mv("U_n", h), p.t("b_hn"));
            let n = map(&add(&add(&p.mv("W_n", x), p.t("b_n")), &mul(&r, &hn)), f64::tanh);
            vec![lerp(&z, &n, h)]
        }
        CellKind::Mgu => {
            let h = &state[0];
            let f = map(&pre(&p, "W_f", x, "U_f", h, "b_f"), sigmoid);
            let cand = map(&pre(&p, "W_h", x, "U_h", &mul(&f, h), "b_h"), f64::tanh);
            vec![lerp(&f, h, &cand)]
        }
        CellKind::LiGru => {
            let h = &state[0];
            let z = map(&pre(&p, "W_z", x, "U_z", h, "b_z"), sigmoid);
            let cand = map(&pre(&p, "W_h", x, "U_h", h, "b_h"), |v| v.max(0.0));
            vec![(0..h.len()).map(|k| z[k] * h[k] + (1.0 - z[k]) * cand[k]).collect()]
        }
        CellKind::IndRnn { activation } => {
            let h = &state[0];
            let v = add(&add(&p.mv("W", x), &mul(p.t("u"), h)), p.t("b"));
            vec![map(&v, |a| act(activation, a))]
        }
        CellKind::FastRnn => {
            let h = &state[0];
            let cand = map(&pre(&p, "W", x, "U", h, "b"), f64::tanh);
            let (a, b) = (sigmoid(p.scalar("alpha")), sigmoid(p.scalar("beta")));
            vec![(0..h.len()).map(|k| a * cand[k] + b * h[k]).collect()]
        }
        CellKind::FastGrnn => {
            let h = &state[0];
            let shared = add(&p.mv("W", x), &p.mv("U", h));
            let z = map(&add(&shared, p.t("b_z")), sigmoid);
            let cand = map(&add(&shared, p.t("b_h")), f64::tanh);
            let (zeta, nu) = (sigmoid(p.scalar("zeta")), sigmoid(p.scalar("nu")));
            vec![(0..h.len())
                .map(|k| (zeta * (1.0 - z[k]) + nu) * cand[k] + z[k] * h[k])
                .collect()]
        }
        CellKind::CoRnn { dt, gamma, epsilon } => {
            let (y, z) = (&state[0], &state[1]);
            let drive = add(&add(&p.mv("W", y), &p.mv("W_tilde", z)), &add(&p.mv("V", x), p.t("b")));
            let z2: Vec<f64> = (0..y.len())
                .map(|k| z[k] + dt * (drive[k].tanh() - gamma * y[k] - epsilon * z[k]))
                .collect();
            let y2: Vec<f64> = (0..y.len()).map(|k| y[k] + dt * z2[k]).collect();
            vec![y2, z2]
        }
        CellKind::Lem { dt_max } => {
            let (h, z) = (&state[0], &state[1]);
            let d1 = map(&pre(&p, "W_1", x, "U_1", h, "b_1"), |v| dt_max * sigmoid(v));
            let d2 = map(&pre(&p, "W_2", x, "U_2", h, "b_2"), |v| dt_max * sigmoid(v));
            let zt = map(&pre(&p, "W_z", x, "U_z", h, "b_z"), f64::tanh);
            let z2 = lerp(&d1, z, &zt);
            let ht = map(&pre(&p, "W_h", x, "U_h", &z2, "b_h"), f64::tanh);
            vec![lerp(&d2, h, &ht), z2]
        }
        CellKind::AntisymmetricRnn { eps_step, gamma } => {
            let h = &state[0];
            let w = p.t("W");
            let n = h.len();
            let ah: Vec<f64> = (0..n)
                .map(|r| {
                    (0..n)
                        .map(|c| {
                            let a = w[r * n + c] - w[c * n + r] - if r == c { gamma } else { 0.0 };
                            a * h[c]
                        })
                        .sum()
                })
                .collect();
            let v = add(&add(&ah, &p.mv("V", x)), p.t("b"));
            vec![(0..n).map(|k| h[k] + eps_step * v[k].tanh()).collect()]
        }
    };
    (next[0].clone(), next)
}

/// Splits a `CellState` of `[B, H]` tensors into per-row part vectors.
pub fn rows_of(state: &CellState<Tensor<f64>>) -> Vec<Vec<Vec<f64>>> {
    let parts = state.parts();
    let batch = parts[0].shape()[0];
    (0..batch)
        .map(|b| {
            parts
                .iter()
                .map(|t| {
                    let w = t.shape()[1];
                    t.data()[b * w..(b + 1) * w].to_vec()
                })
                .collect()
        })
        .collect()
}

/// Reference scan over a `[T, B, I]` batch with optional lengths: returns
/// per-step outputs `[T][B][H]` and the final per-row state.
pub fn scan(
    cell: &Cell<f64>,
    data: &Tensor<f64>,
    lengths: Option<&[usize]>,
    state0: &CellState<Tensor<f64>>,
) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) {
    let (steps, batch, features) = (data.shape()[0], data.shape()[1], data.shape()[2]);
    let mut state = rows_of(state0);
    let mut outs = vec![vec![Vec::new(); batch]; steps];
    for t in 0..steps {
        for b in 0..batch {
            let at = (t * batch + b) * features;
            let x = &data.data()[at..at + features];
            if lengths.is_some_and(|l| t >= l[b]) {
                outs[t][b] = vec![0.0; cell.spec().hidden_size];
                continue;
            }
            let (o, s) = step(cell, x, &state[b]);
            outs[t][b] = o;
            state[b] = s;
        }
    }
    (outs, state)
}
