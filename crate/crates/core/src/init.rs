//! Parameter initializers shared by every cell.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    /// `U(-1/√H, 1/√H)` with `H` the fan-in, or the hidden size when the
    /// caller supplies one.
    UniformFan,
    /// `U(-b, b)` with `b = √(6 / (fan_in + fan_out))`.
    GlorotUniform,
    /// Sign-corrected QR factor of a gaussian matrix; square or tall targets only.
    Orthogonal,
    /// `g` on the diagonal, zeros elsewhere.
    IdentityScaled(f64),
    Zeros,
    Constant(f64),
    /// Uniform on the half-open interval `(low, high]`.
    Uniform { low: f64, high: f64 },
    /// `N(0, std²)`.
    Gaussian { std: f64 },
    /// `N(0, 1/H)`, `H` chosen as for `UniformFan`.
    GaussianFan,
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitSpec::UniformFan => write!(f, "uniform_fan"),
            InitSpec::GlorotUniform => write!(f, "glorot_uniform"),
            InitSpec::Orthogonal => write!(f, "orthogonal"),
            InitSpec::IdentityScaled(g) => write!(f, "identity_scaled({g})"),
            InitSpec::Zeros => write!(f, "zeros"),
            InitSpec::Constant(v) => write!(f, "constant({v})"),
            InitSpec::Uniform { low, high } => write!(f, "U({low},{high})"),
            InitSpec::Gaussian { std } => write!(f, "N(0,{std}^2)"),
            InitSpec::GaussianFan => write!(f, "N(0,1/H)"),
        }
    }
}

/// Fan-in of a weight shape: the second extent of a matrix, the length of a vector.
pub fn fan_in(shape: &[usize]) -> usize {
    match shape {
        [n] => *n,
        [_, c] => *c,
        _ => 0,
    }
}

fn fan_out(shape: &[usize]) -> usize {
    match shape {
        [n] => *n,
        [r, _] => *r,
        _ => 0,
    }
}

pub fn initialize<T: Real>(spec: InitSpec, shape: &[usize], rng: &mut Rng) -> Result<Tensor<T>> {
    initialize_with_fan(spec, shape, None, rng)
}

/// Like [`initialize`], with `fan` replacing the shape-derived `H` of `UniformFan`.
pub fn initialize_with_fan<T: Real>(
    spec: InitSpec,
    shape: &[usize],
    fan: Option<usize>,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::contract(format!(
            "initializers take rank 1 or 2 shapes, got {shape:?}"
        )));
    }
    let n: usize = shape.iter().product();
    let values: Vec<f64> = match spec {
        InitSpec::UniformFan => {
            let h = fan.unwrap_or_else(|| fan_in(shape));
            if h == 0 {
                return Err(Error::contract("uniform_fan with zero fan"));
            }
            let bound = 1.0 / (h as f64).sqrt();
            (0..n)
                .map(|_| bound * (2.0 * rng.next_open_uniform() - 1.0))
                .collect()
        }
        InitSpec::GlorotUniform => {
            let bound = (6.0 / (fan_in(shape) + fan_out(shape)) as f64).sqrt();
            (0..n)
                .map(|_| bound * (2.0 * rng.next_open_uniform() - 1.0))
                .collect()
        }
        InitSpec::Orthogonal => return orthogonal(shape, rng),
        InitSpec::IdentityScaled(g) => {
            let [r, c] = shape else {
                return Err(Error::contract("identity_scaled needs a matrix shape"));
            };
            let mut v = vec![0.0; n];
            for i in 0..(*r).min(*c) {
                v[i * c + i] = g;
            }
            v
        }
        InitSpec::Zeros => vec![0.0; n],
        InitSpec::Constant(c) => vec![c; n],
        InitSpec::Uniform { low, high } => (0..n)
            .map(|_| low + (high - low) * (1.0 - rng.next_uniform()))
            .collect(),
        InitSpec::Gaussian { std } => (0..n).map(|_| std * rng.next_gaussian()).collect(),
        InitSpec::GaussianFan => {
            let std = 1.0 / (fan.unwrap_or_else(|| fan_in(shape)) as f64).sqrt();
            (0..n).map(|_| std * rng.next_gaussian()).collect()
        }
    };
    Tensor::from_f64(shape, &values)
}

fn orthogonal<T: Real>(shape: &[usize], rng: &mut Rng) -> Result<Tensor<T>> {
    let (rows, cols) = match shape {
        [r, c] => (*r, *c),
        _ => {
            return Err(Error::contract(format!(
                "orthogonal init needs a matrix shape, got {shape:?}"
            )))
        }
    };
    if cols > rows {
        return Err(Error::contract(format!(
            "orthogonal init needs a square or tall matrix, got {rows}x{cols}"
        )));
    }
    let draws: Vec<f64> = (0..rows * rows).map(|_| rng.next_gaussian()).collect();
    let qr = DMatrix::from_row_slice(rows, rows, &draws).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..rows {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(q[(i, j)]);
        }
    }
    Tensor::from_f64(shape, &out)
}
