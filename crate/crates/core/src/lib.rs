//! Recurrent cells, sequence layers and wrappers sharing one interface, built
//! on a small reverse-mode differentiation tape.
//!
//! The levels are:
//!
//! * [`cells`]: a single time step for one of 13 variants,
//! * [`layers`]: scans over whole sequences, bidirectional and stacked drivers,
//! * wrappers ([`layers::Dropout`], [`layers::Residual`]) that extend cells or
//!   layers without changing their interface.
//!
//! [`train`] and [`tasks`] provide a full-sequence BPTT loop and the synthetic
//! long-memory benchmarks used to exercise it.

pub mod autodiff;
pub mod cells;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use cells::{create_cell, Cell, CellKind, CellParams, CellSpec, CellState, Recurrent};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{DType, Real, Tensor};
