//! Recurrent cells: one time step `(x, state) -> (output, state')`.
//!
//! Every cell is described by a [`CellSpec`], owns a [`CellParams`] laid out
//! by its manifest, and is driven through the [`Recurrent`] trait. The
//! variants live in one module each; this module is the registry that maps a
//! [`CellKind`] to its manifest, state layout and equations.

mod antisymmetric;
pub mod conformance;
mod cornn;
mod elman;
mod fast;
mod gru;
mod indrnn;
mod lem;
mod lstm;
mod state;

use std::fmt;

pub use antisymmetric::effective_matrix;
pub use state::{CellState, StateLayout};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init::{initialize_with_fan, InitSpec};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::contract(format!("unknown activation `{s}`"))),
        }
    }

    pub(crate) fn apply<T: Real>(self, tape: &Tape<T>, v: Var) -> Result<Var> {
        match self {
            Activation::Tanh => tape.tanh(v),
            Activation::Relu => tape.relu(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gated,
    PhysicsInspired,
    AlternativeIntegration,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gated => "gated",
            Family::PhysicsInspired => "physics-inspired",
            Family::AlternativeIntegration => "alternative-integration",
        }
    }
}

/// Cell variant together with its variant-specific hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellKind {
    Elman { activation: Activation },
    Lstm,
    PeepholeLstm,
    Gru,
    Mgu,
    IndRnn { activation: Activation },
    FastRnn,
    FastGrnn,
    LiGru,
    CoRnn { dt: f64, gamma: f64, epsilon: f64 },
    Lem { dt_max: f64 },
    AntisymmetricRnn { eps_step: f64, gamma: f64 },
    Mlstm,
}

impl CellKind {
    /// Every registered cell with default hyperparameters, in display order.
    pub fn all() -> Vec<CellKind> {
        REGISTRY.iter().map(|&name| CellKind::from_name(name).unwrap()).collect()
    }

    pub fn from_name(name: &str) -> Result<CellKind> {
        Ok(match name {
            "elman" => CellKind::Elman {
                activation: Activation::Tanh,
            },
            "lstm" => CellKind::Lstm,
            "peephole_lstm" => CellKind::PeepholeLstm,
            "gru" => CellKind::Gru,
            "mgu" => CellKind::Mgu,
            "indrnn" => CellKind::IndRnn {
                activation: Activation::Relu,
            },
            "fastrnn" => CellKind::FastRnn,
            "fastgrnn" => CellKind::FastGrnn,
            "ligru" => CellKind::LiGru,
            "cornn" => CellKind::CoRnn {
                dt: 0.05,
                gamma: 1.0,
                epsilon: 1.0,
            },
            "lem" => CellKind::Lem { dt_max: 1.0 },
            "antisymmetric" => CellKind::AntisymmetricRnn {
                eps_step: 0.01,
                gamma: 0.01,
            },
            "mlstm" => CellKind::Mlstm,
            other => {
                return Err(Error::contract(format!(
                    "unknown cell `{other}` (known: {})",
                    REGISTRY.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            CellKind::Elman { .. } => "elman",
            CellKind::Lstm => "lstm",
            CellKind::PeepholeLstm => "peephole_lstm",
            CellKind::Gru => "gru",
            CellKind::Mgu => "mgu",
            CellKind::IndRnn { .. } => "indrnn",
            CellKind::FastRnn => "fastrnn",
            CellKind::FastGrnn => "fastgrnn",
            CellKind::LiGru => "ligru",
            CellKind::CoRnn { .. } => "cornn",
            CellKind::Lem { .. } => "lem",
            CellKind::AntisymmetricRnn { .. } => "antisymmetric",
            CellKind::Mlstm => "mlstm",
        }
    }

    pub fn family(&self) -> Family {
        match self {
            CellKind::Lstm
            | CellKind::PeepholeLstm
            | CellKind::Gru
            | CellKind::Mgu
            | CellKind::FastGrnn
            | CellKind::LiGru
            | CellKind::Mlstm => Family::Gated,
            CellKind::CoRnn { .. } | CellKind::Lem { .. } | CellKind::AntisymmetricRnn { .. } => {
                Family::PhysicsInspired
            }
            CellKind::Elman { .. } | CellKind::IndRnn { .. } | CellKind::FastRnn => {
                Family::AlternativeIntegration
            }
        }
    }

    pub fn state_layout(&self) -> StateLayout {
        match self {
            CellKind::Lstm | CellKind::PeepholeLstm | CellKind::Mlstm => {
                StateLayout::Double(["h", "c"])
            }
            CellKind::Lem { .. } => StateLayout::Double(["h", "z"]),
            CellKind::CoRnn { .. } => StateLayout::Custom(&["y", "z"]),
            _ => StateLayout::Single("h"),
        }
    }

    /// Hyperparameters as `(key, value)` pairs.
    pub fn hyperparams(&self) -> Vec<(&'static str, HyperValue)> {
        use HyperValue::*;
        match *self {
            CellKind::Elman { activation } | CellKind::IndRnn { activation } => {
                vec![("activation", Act(activation))]
            }
            CellKind::CoRnn { dt, gamma, epsilon } => vec![
                ("dt", Num(dt)),
                ("gamma", Num(gamma)),
                ("epsilon", Num(epsilon)),
            ],
            CellKind::Lem { dt_max } => vec![("dt_max", Num(dt_max))],
            CellKind::AntisymmetricRnn { eps_step, gamma } => {
                vec![("eps_step", Num(eps_step)), ("gamma", Num(gamma))]
            }
            _ => Vec::new(),
        }
    }

    /// Replaces one hyperparameter; unknown keys for this cell are an error.
    pub fn set_hyperparam(&mut self, key: &str, value: HyperValue) -> Result<()> {
        let name = self.name();
        let bad = || {
            Error::contract(format!(
                "cell `{name}` has no hyperparameter `{key}` of that type"
            ))
        };
        match (self, key, value) {
            (CellKind::Elman { activation }, "activation", HyperValue::Act(a))
            | (CellKind::IndRnn { activation }, "activation", HyperValue::Act(a)) => {
                *activation = a
            }
            (CellKind::CoRnn { dt, .. }, "dt", HyperValue::Num(v)) => *dt = v,
            (CellKind::CoRnn { gamma, .. }, "gamma", HyperValue::Num(v)) => *gamma = v,
            (CellKind::CoRnn { epsilon, .. }, "epsilon", HyperValue::Num(v)) => *epsilon = v,
            (CellKind::Lem { dt_max }, "dt_max", HyperValue::Num(v)) => *dt_max = v,
            (CellKind::AntisymmetricRnn { eps_step, .. }, "eps_step", HyperValue::Num(v)) => {
                *eps_step = v
            }
            (CellKind::AntisymmetricRnn { gamma, .. }, "gamma", HyperValue::Num(v)) => *gamma = v,
            _ => return Err(bad()),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let finite = |k: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::contract(format!("{}: {k} must be finite", self.name())))
            }
        };
        match *self {
            CellKind::CoRnn { dt, gamma, epsilon } => {
                finite("dt", dt)?;
                finite("gamma", gamma)?;
                finite("epsilon", epsilon)?;
                // dt = 0 is accepted: the degenerate step is the identity map and is
                // useful as a structural check.
                if dt < 0.0 || gamma < 0.0 || epsilon < 0.0 {
                    return Err(Error::contract(format!(
                        "cornn requires dt ≥ 0, gamma ≥ 0, epsilon ≥ 0 (got {dt}, {gamma}, {epsilon})"
                    )));
                }
            }
            CellKind::Lem { dt_max } => {
                finite("dt_max", dt_max)?;
                if dt_max <= 0.0 {
                    return Err(Error::contract(format!("lem requires dt_max > 0, got {dt_max}")));
                }
            }
            CellKind::AntisymmetricRnn { eps_step, gamma } => {
                finite("eps_step", eps_step)?;
                finite("gamma", gamma)?;
                if eps_step <= 0.0 || gamma < 0.0 {
                    return Err(Error::contract(format!(
                        "antisymmetric requires eps_step > 0 and gamma ≥ 0 (got {eps_step}, {gamma})"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Registered cell names, in display order.
pub const REGISTRY: [&str; 13] = [
    "elman",
    "lstm",
    "peephole_lstm",
    "gru",
    "mgu",
    "indrnn",
    "fastrnn",
    "fastgrnn",
    "ligru",
    "cornn",
    "lem",
    "antisymmetric",
    "mlstm",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HyperValue {
    Num(f64),
    Act(Activation),
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperValue::Num(v) => write!(f, "{v}"),
            HyperValue::Act(a) => write!(f, "{}", a.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSpec {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl CellSpec {
    pub fn new(kind: CellKind, input_size: usize, hidden_size: usize) -> Result<Self> {
        let spec = CellSpec {
            kind,
            input_size,
            hidden_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden_size == 0 {
            return Err(Error::contract(format!(
                "{}: input and hidden sizes must be ≥ 1 (got I={}, H={})",
                self.kind.name(),
                self.input_size,
                self.hidden_size
            )));
        }
        self.kind.validate()
    }

    pub fn manifest(&self) -> Vec<ParamSpec> {
        self.symbolic_manifest()
            .into_iter()
            .map(|d| ParamSpec {
                name: d.name.to_string(),
                shape: d
                    .shape
                    .iter()
                    .map(|e| e.resolve(self.input_size, self.hidden_size))
                    .collect(),
                init: d.init,
            })
            .collect()
    }

    pub fn symbolic_manifest(&self) -> Vec<ParamDecl> {
        match self.kind {
            CellKind::Elman { .. } => elman::manifest(),
            CellKind::Lstm => lstm::manifest(lstm::Variant::Plain),
            CellKind::PeepholeLstm => lstm::manifest(lstm::Variant::Peephole),
            CellKind::Mlstm => lstm::manifest(lstm::Variant::Multiplicative),
            CellKind::Gru => gru::gru_manifest(),
            CellKind::Mgu => gru::mgu_manifest(),
            CellKind::LiGru => gru::ligru_manifest(),
            CellKind::IndRnn { .. } => indrnn::manifest(),
            CellKind::FastRnn => fast::fastrnn_manifest(),
            CellKind::FastGrnn => fast::fastgrnn_manifest(),
            CellKind::CoRnn { .. } => cornn::manifest(),
            CellKind::Lem { .. } => lem::manifest(),
            CellKind::AntisymmetricRnn { .. } => antisymmetric::manifest(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.manifest()
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    /// Parameter count as a polynomial in `I` and `H`, e.g. `4HI + 4H² + 4H`.
    pub fn parameter_count_formula(&self) -> String {
        let (mut hi, mut hh, mut h, mut one) = (0, 0, 0, 0);
        for d in self.symbolic_manifest() {
            match d.shape {
                [Extent::Hidden, Extent::Input] => hi += 1,
                [Extent::Hidden, Extent::Hidden] => hh += 1,
                [Extent::Hidden] => h += 1,
                [Extent::One] => one += 1,
                other => unreachable!("unexpected declared shape {other:?}"),
            }
        }
        let term = |c: usize, sym: &str| match c {
            0 => None,
            1 if !sym.is_empty() => Some(sym.to_string()),
            c => Some(format!("{c}{sym}")),
        };
        [term(hi, "HI"), term(hh, "H²"), term(h, "H"), term(one, "")]
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join(" + ")
    }

    pub fn zero_state<T: Real>(&self, batch: usize) -> Result<CellState<Tensor<T>>> {
        if batch == 0 {
            return Err(Error::contract("batch size must be ≥ 1"));
        }
        let z = || Tensor::zeros(&[batch, self.hidden_size]);
        Ok(match self.kind.state_layout() {
            StateLayout::Single(_) => CellState::Single(z()?),
            StateLayout::Double(_) => CellState::Double(z()?, z()?),
            StateLayout::Custom(names) => {
                CellState::Custom(names.iter().map(|&n| Ok((n, z()?))).collect::<Result<_>>()?)
            }
        })
    }
}

/// Size of one extent of a declared parameter shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extent {
    Input,
    Hidden,
    One,
}

impl Extent {
    fn resolve(self, input: usize, hidden: usize) -> usize {
        match self {
            Extent::Input => input,
            Extent::Hidden => hidden,
            Extent::One => 1,
        }
    }
}

/// Manifest entry with a symbolic shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamDecl {
    pub name: &'static str,
    pub shape: &'static [Extent],
    pub init: InitSpec,
}

pub(crate) const MAT_HI: &[Extent] = &[Extent::Hidden, Extent::Input];
pub(crate) const MAT_HH: &[Extent] = &[Extent::Hidden, Extent::Hidden];
pub(crate) const VEC_H: &[Extent] = &[Extent::Hidden];
pub(crate) const SCALAR: &[Extent] = &[Extent::One];

pub(crate) const fn decl(name: &'static str, shape: &'static [Extent]) -> ParamDecl {
    ParamDecl {
        name,
        shape,
        init: InitSpec::UniformFan,
    }
}

/// Manifest entry with a concrete shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitSpec,
}

/// Learnable tensors of one cell, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams<T: Real = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> CellParams<T> {
    /// Checks `tensors` against the manifest of `spec` (names, order and shapes).
    pub fn from_tensors(spec: &CellSpec, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let manifest = spec.manifest();
        if manifest.len() != named.len() {
            return Err(Error::contract(format!(
                "{}: expected {} parameters, got {}",
                spec.kind.name(),
                manifest.len(),
                named.len()
            )));
        }
        for (decl, (name, t)) in manifest.iter().zip(&named) {
            if &decl.name != name {
                return Err(Error::contract(format!(
                    "{}: expected parameter `{}`, got `{name}`",
                    spec.kind.name(),
                    decl.name
                )));
            }
            if decl.shape != t.shape() {
                return Err(Error::dim(
                    format!("{}: parameter {name}", spec.kind.name()),
                    &decl.shape,
                    t.shape(),
                ));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(CellParams { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

/// Parameters of one component placed on a tape.
///
/// `leaves` are the parameter leaves in manifest order; `work` holds nodes a
/// cell derives from them once per tape (fused gate matrices and the like).
#[derive(Debug, Clone, PartialEq)]
pub struct Bound {
    pub leaves: Vec<Var>,
    pub work: Vec<Var>,
}

/// Whether a forward pass is training (stochastic wrappers active) or evaluating.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub fn rng(&mut self) -> Option<&mut Rng> {
        match self {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        }
    }
}

/// The interface shared by every cell and every wrapped cell.
pub trait Recurrent<T: Real> {
    fn describe(&self) -> String;

    fn input_size(&self) -> usize;

    fn output_size(&self) -> usize;

    fn state_layout(&self) -> StateLayout;

    fn zero_state(&self, batch: usize) -> Result<CellState<Tensor<T>>>;

    fn manifest(&self) -> Vec<ParamSpec>;

    fn parameters(&self) -> Vec<&Tensor<T>>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>>;

    /// Places parameters on `tape` as gradient-tracked leaves.
    fn bind(&self, tape: &Tape<T>) -> Result<Bound>;

    /// One time step. `x` is `[B, input_size]`.
    fn step(
        &self,
        tape: &Tape<T>,
        bound: &Bound,
        x: Var,
        state: &CellState<Var>,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, CellState<Var>)>;
}

impl<T: Real, R: Recurrent<T> + ?Sized> Recurrent<T> for Box<R> {
    fn describe(&self) -> String {
        (**self).describe()
    }
    fn input_size(&self) -> usize {
        (**self).input_size()
    }
    fn output_size(&self) -> usize {
        (**self).output_size()
    }
    fn state_layout(&self) -> StateLayout {
        (**self).state_layout()
    }
    fn zero_state(&self, batch: usize) -> Result<CellState<Tensor<T>>> {
        (**self).zero_state(batch)
    }
    fn manifest(&self) -> Vec<ParamSpec> {
        (**self).manifest()
    }
    fn parameters(&self) -> Vec<&Tensor<T>> {
        (**self).parameters()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        (**self).parameters_mut()
    }
    fn bind(&self, tape: &Tape<T>) -> Result<Bound> {
        (**self).bind(tape)
    }
    fn step(
        &self,
        tape: &Tape<T>,
        bound: &Bound,
        x: Var,
        state: &CellState<Var>,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, CellState<Var>)> {
        (**self).step(tape, bound, x, state, mode)
    }
}

/// A cell variant with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell<T: Real = f64> {
    spec: CellSpec,
    params: CellParams<T>,
}

/// Builds a cell with every manifest entry initialized from `rng`.
///
/// Matrices and biases drawn with `uniform_fan` use `H = hidden_size`.
pub fn create_cell<T: Real>(spec: CellSpec, rng: &mut Rng) -> Result<Cell<T>> {
    spec.validate()?;
    let named = spec
        .manifest()
        .into_iter()
        .map(|p| {
            let t = initialize_with_fan(p.init, &p.shape, Some(spec.hidden_size), rng)?;
            Ok((p.name, t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Cell {
        spec,
        params: CellParams::from_tensors(&spec, named)?,
    })
}

impl<T: Real> Cell<T> {
    pub fn new(spec: CellSpec, rng: &mut Rng) -> Result<Self> {
        create_cell(spec, rng)
    }

    pub fn from_params(spec: CellSpec, params: CellParams<T>) -> Result<Self> {
        spec.validate()?;
        let named = params.names.into_iter().zip(params.tensors).collect();
        Ok(Cell {
            spec,
            params: CellParams::from_tensors(&spec, named)?,
        })
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn params(&self) -> &CellParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut CellParams<T> {
        &mut self.params
    }

    /// Sets every parameter to zero.
    pub fn zero_params(&mut self) {
        for t in &mut self.params.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn check_inputs(&self, tape: &Tape<T>, x: Var, state: &CellState<Var>) -> Result<()> {
        let name = self.spec.kind.name();
        let xs = tape.shape(x)?;
        let (i, h) = (self.spec.input_size, self.spec.hidden_size);
        if xs.len() != 2 || xs[1] != i {
            return Err(Error::dim(format!("{name}: input x"), &[xs.first().copied().unwrap_or(0), i], &xs));
        }
        let batch = xs[0];
        if !state.matches_layout(&self.spec.kind.state_layout()) {
            return Err(Error::contract(format!(
                "{name}: state does not match layout {:?}",
                self.spec.kind.state_layout()
            )));
        }
        for (part, v) in state.named_parts() {
            let s = tape.shape(*v)?;
            if s != [batch, h] {
                return Err(Error::dim(format!("{name}: state {part}"), &[batch, h], &s));
            }
        }
        Ok(())
    }
}

impl<T: Real> Recurrent<T> for Cell<T> {
    fn describe(&self) -> String {
        self.spec.kind.name().to_string()
    }

    fn input_size(&self) -> usize {
        self.spec.input_size
    }

    fn output_size(&self) -> usize {
        self.spec.hidden_size
    }

    fn state_layout(&self) -> StateLayout {
        self.spec.kind.state_layout()
    }

    fn zero_state(&self, batch: usize) -> Result<CellState<Tensor<T>>> {
        self.spec.zero_state(batch)
    }

    fn manifest(&self) -> Vec<ParamSpec> {
        self.spec.manifest()
    }

    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.params.tensors.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params.tensors.iter_mut().collect()
    }

    fn bind(&self, tape: &Tape<T>) -> Result<Bound> {
        let leaves = self
            .params
            .tensors
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let work = prepare(&self.spec, tape, &leaves)?;
        Ok(Bound { leaves, work })
    }

    fn step(
        &self,
        tape: &Tape<T>,
        bound: &Bound,
        x: Var,
        state: &CellState<Var>,
        _mode: &mut Mode<'_>,
    ) -> Result<(Var, CellState<Var>)> {
        self.check_inputs(tape, x, state)?;
        cell_forward(&self.spec, tape, bound, x, state)
    }
}

/// Per-tape derived nodes for a cell (fused projections); see [`Bound::work`].
pub fn prepare<T: Real>(spec: &CellSpec, tape: &Tape<T>, leaves: &[Var]) -> Result<Vec<Var>> {
    if leaves.len() != spec.symbolic_manifest().len() {
        return Err(Error::contract(format!(
            "{}: bound {} leaves, manifest has {}",
            spec.kind.name(),
            leaves.len(),
            spec.symbolic_manifest().len()
        )));
    }
    match spec.kind {
        CellKind::Lstm => lstm::prepare(tape, leaves, lstm::Variant::Plain),
        CellKind::PeepholeLstm => lstm::prepare(tape, leaves, lstm::Variant::Peephole),
        CellKind::Mlstm => lstm::prepare(tape, leaves, lstm::Variant::Multiplicative),
        CellKind::Gru => gru::gru_prepare(tape, leaves),
        CellKind::Lem { .. } => lem::prepare(tape, leaves),
        CellKind::AntisymmetricRnn { gamma, .. } => {
            antisymmetric::prepare(tape, leaves, spec.hidden_size, gamma)
        }
        _ => Ok(leaves.to_vec()),
    }
}

/// The cell equation for one step, without input validation.
pub fn cell_forward<T: Real>(
    spec: &CellSpec,
    tape: &Tape<T>,
    bound: &Bound,
    x: Var,
    state: &CellState<Var>,
) -> Result<(Var, CellState<Var>)> {
    let p = &bound.work;
    let h = spec.hidden_size;
    match spec.kind {
        CellKind::Elman { activation } => elman::step(tape, p, activation, x, state),
        CellKind::Lstm => lstm::step(tape, p, h, lstm::Variant::Plain, x, state),
        CellKind::PeepholeLstm => lstm::step(tape, p, h, lstm::Variant::Peephole, x, state),
        CellKind::Mlstm => lstm::step(tape, p, h, lstm::Variant::Multiplicative, x, state),
        CellKind::Gru => gru::gru_step(tape, p, h, x, state),
        CellKind::Mgu => gru::mgu_step(tape, p, x, state),
        CellKind::LiGru => gru::ligru_step(tape, p, x, state),
        CellKind::IndRnn { activation } => indrnn::step(tape, p, activation, x, state),
        CellKind::FastRnn => fast::fastrnn_step(tape, p, x, state),
        CellKind::FastGrnn => fast::fastgrnn_step(tape, p, x, state),
        CellKind::CoRnn { dt, gamma, epsilon } => {
            cornn::step(tape, p, T::from_f64_lossy(dt), T::from_f64_lossy(gamma), T::from_f64_lossy(epsilon), x, state)
        }
        CellKind::Lem { dt_max } => lem::step(tape, p, h, T::from_f64_lossy(dt_max), x, state),
        CellKind::AntisymmetricRnn { eps_step, .. } => {
            antisymmetric::step(tape, p, T::from_f64_lossy(eps_step), x, state)
        }
    }
}

/// `x·Wᵀ + h·Uᵀ + b`.
pub(crate) fn gate_pre<T: Real>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    h: Var,
    u: Var,
    b: Var,
) -> Result<Var> {
    let xw = tape.matmul_bt(x, w)?;
    let hu = tape.matmul_bt(h, u)?;
    tape.add(tape.add(xw, hu)?, b)
}

/// `a ⊙ (1 - g) + b ⊙ g`, the interpolation most gated cells end with.
pub(crate) fn lerp<T: Real>(tape: &Tape<T>, g: Var, a: Var, b: Var) -> Result<Var> {
    let keep = tape.mul(tape.one_minus(g)?, a)?;
    tape.add(keep, tape.mul(g, b)?)
}

pub(crate) fn single(state: &CellState<Var>) -> Result<Var> {
    match state {
        CellState::Single(h) => Ok(*h),
        _ => Err(Error::contract("expected a single-tensor state")),
    }
}

pub(crate) fn double(state: &CellState<Var>) -> Result<(Var, Var)> {
    match state {
        CellState::Double(a, b) => Ok((*a, *b)),
        _ => Err(Error::contract("expected a two-tensor state")),
    }
}

#[cfg(test)]
mod tests;
