//! Sequence drivers and wrappers.
//!
//! [`scan`] folds a [`Recurrent`] component over a time-major sequence.
//! [`SequenceLayer`] is the interface of a complete layer (one or two
//! directions); [`Dropout`] and [`Residual`] wrap either a cell or a layer
//! and keep the interface of what they wrap. [`StackedRnn`] composes layers
//! according to a [`LayerSpec`].

use crate::autodiff::{Tape, Var};
use crate::cells::{Bound, Cell, CellSpec, CellState, Mode, ParamSpec, Recurrent, StateLayout};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Time-major batch `[T, B, F]` with optional per-sequence valid lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch<T: Real = f64> {
    data: Tensor<T>,
    lengths: Option<Vec<usize>>,
}

impl<T: Real> SequenceBatch<T> {
    pub fn new(data: Tensor<T>, lengths: Option<Vec<usize>>) -> Result<Self> {
        let [steps, batch, _] = *data.shape() else {
            return Err(Error::contract(format!(
                "sequence batch must be [T, B, F], got {:?}",
                data.shape()
            )));
        };
        if steps == 0 || batch == 0 {
            return Err(Error::contract("sequence batch needs T ≥ 1 and B ≥ 1"));
        }
        if let Some(l) = &lengths {
            if l.len() != batch {
                return Err(Error::dim("sequence lengths", &[batch], &[l.len()]));
            }
            if let Some(bad) = l.iter().find(|&&n| n == 0 || n > steps) {
                return Err(Error::contract(format!(
                    "sequence length {bad} outside 1..={steps}"
                )));
            }
        }
        Ok(SequenceBatch { data, lengths })
    }

    /// Accepts batch-major `[B, T, F]` data and transposes it to time-major.
    pub fn from_batch_major(data: &Tensor<T>, lengths: Option<Vec<usize>>) -> Result<Self> {
        let [batch, steps, features] = *data.shape() else {
            return Err(Error::contract(format!(
                "batch-major data must be [B, T, F], got {:?}",
                data.shape()
            )));
        };
        let src = data.data();
        let mut out = Vec::with_capacity(src.len());
        for t in 0..steps {
            for b in 0..batch {
                let at = (b * steps + t) * features;
                out.extend_from_slice(&src[at..at + features]);
            }
        }
        Self::new(Tensor::from_vec(&[steps, batch, features], out)?, lengths)
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn lengths(&self) -> Option<&[usize]> {
        self.lengths.as_deref()
    }

    pub fn steps(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn batch(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.data.shape()[2]
    }

    /// One constant `[B, F]` node per time step.
    pub fn to_vars(&self, tape: &Tape<T>) -> Result<Vec<Var>> {
        (0..self.steps())
            .map(|t| tape.constant(self.data.outer(t)?))
            .collect()
    }
}

/// Per-step outputs of a scan plus the final state.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    pub outputs: Vec<Var>,
    pub state: CellState<Var>,
}

/// Stacks per-step `[B, H]` nodes into a `[T, B, H]` tensor.
pub fn stack_steps<T: Real>(tape: &Tape<T>, steps: &[Var]) -> Result<Tensor<T>> {
    let parts = steps
        .iter()
        .map(|&v| tape.value(v))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&parts)
}

fn row_mask<T: Real>(batch: usize, width: usize, active: impl Fn(usize) -> bool) -> Tensor<T> {
    let mut data = Vec::with_capacity(batch * width);
    for b in 0..batch {
        let v = if active(b) { T::one() } else { T::zero() };
        data.extend(std::iter::repeat_n(v, width));
    }
    Tensor::from_parts(vec![batch, width], data)
}

/// Left fold of `cell.step` over `inputs`.
///
/// When `lengths` is given, rows whose sequence has ended emit zeros and
/// carry their last valid state unchanged.
pub fn scan<T: Real, R: Recurrent<T> + ?Sized>(
    cell: &R,
    tape: &Tape<T>,
    bound: &Bound,
    inputs: &[Var],
    lengths: Option<&[usize]>,
    state0: CellState<Var>,
    mode: &mut Mode<'_>,
) -> Result<ScanOutput> {
    if inputs.is_empty() {
        return Err(Error::contract("scan over an empty sequence"));
    }
    let mut state = state0;
    let mut outputs = Vec::with_capacity(inputs.len());
    for (t, &x) in inputs.iter().enumerate() {
        let xs = tape.shape(x)?;
        if xs.len() != 2 || xs[1] != cell.input_size() {
            return Err(Error::dim(
                format!("scan ({}): input features", cell.describe()),
                &[xs.first().copied().unwrap_or(0), cell.input_size()],
                &xs,
            ));
        }
        let (out, next) = cell.step(tape, bound, x, &state, mode)?;
        match lengths {
            Some(len) if len.iter().any(|&n| n <= t) => {
                let batch = xs[0];
                let active = |b: usize| t < len[b];
                let out_width = tape.shape(out)?[1];
                let om = tape.constant(row_mask::<T>(batch, out_width, active))?;
                outputs.push(tape.mul(out, om)?);
                state = next.zip_with(&state, |&new, &old| {
                    let width = tape.shape(new)?[1];
                    let keep = tape.constant(row_mask::<T>(batch, width, active))?;
                    let hold = tape.constant(row_mask::<T>(batch, width, |b| !active(b)))?;
                    tape.add(tape.mul(new, keep)?, tape.mul(old, hold)?)
                })?;
            }
            _ => {
                outputs.push(out);
                state = next;
            }
        }
    }
    Ok(ScanOutput { outputs, state })
}

/// Scans a [`SequenceBatch`], starting from `state0` or the zero state.
pub fn scan_batch<T: Real, R: Recurrent<T> + ?Sized>(
    cell: &R,
    tape: &Tape<T>,
    bound: &Bound,
    batch: &SequenceBatch<T>,
    state0: Option<&CellState<Tensor<T>>>,
    mode: &mut Mode<'_>,
) -> Result<ScanOutput> {
    if batch.features() != cell.input_size() {
        return Err(Error::dim(
            format!("scan ({}): input features", cell.describe()),
            &[cell.input_size()],
            &[batch.features()],
        ));
    }
    let zero;
    let init = match state0 {
        Some(s) => s,
        None => {
            zero = cell.zero_state(batch.batch())?;
            &zero
        }
    };
    let state = init.try_map(|t| tape.constant(t.clone()))?;
    let inputs = batch.to_vars(tape)?;
    scan(cell, tape, bound, &inputs, batch.lengths(), state, mode)
}

/// For each step `t`, the row-wise source step that reverses every sequence
/// within its own length. Padding rows map to themselves.
fn reversal_picks(steps: usize, lengths: &[usize]) -> Vec<Vec<usize>> {
    (0..steps)
        .map(|t| {
            lengths
                .iter()
                .map(|&n| if t < n { n - 1 - t } else { t })
                .collect()
        })
        .collect()
}

fn reverse_steps<T: Real>(tape: &Tape<T>, steps: &[Var], lengths: Option<&[usize]>) -> Result<Vec<Var>> {
    match lengths {
        None => Ok(steps.iter().rev().copied().collect()),
        Some(len) => reversal_picks(steps.len(), len)
            .iter()
            .map(|pick| tape.row_mux(steps, pick))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidirectionalOutput {
    /// `[B, 2H]` per step: forward half, then backward half.
    pub outputs: Vec<Var>,
    pub forward_state: CellState<Var>,
    pub backward_state: CellState<Var>,
}

/// Runs `fwd` over the sequence and `bwd` over its time reversal, re-reverses
/// the backward outputs and concatenates both on the feature axis.
#[allow(clippy::too_many_arguments)]
pub fn bidirectional_scan<T: Real, F: Recurrent<T> + ?Sized, B: Recurrent<T> + ?Sized>(
    fwd: &F,
    bwd: &B,
    tape: &Tape<T>,
    bound_fwd: &Bound,
    bound_bwd: &Bound,
    inputs: &[Var],
    lengths: Option<&[usize]>,
    states: (CellState<Var>, CellState<Var>),
    mode: &mut Mode<'_>,
) -> Result<BidirectionalOutput> {
    if fwd.input_size() != bwd.input_size() || fwd.output_size() != bwd.output_size() {
        return Err(Error::contract(format!(
            "bidirectional directions disagree: forward {}→{}, backward {}→{}",
            fwd.input_size(),
            fwd.output_size(),
            bwd.input_size(),
            bwd.output_size()
        )));
    }
    let forward = scan(fwd, tape, bound_fwd, inputs, lengths, states.0, mode)?;
    let reversed = reverse_steps(tape, inputs, lengths)?;
    let backward = scan(bwd, tape, bound_bwd, &reversed, lengths, states.1, mode)?;
    let backward_outputs = reverse_steps(tape, &backward.outputs, lengths)?;
    let outputs = forward
        .outputs
        .iter()
        .zip(&backward_outputs)
        .map(|(&f, &b)| tape.concat_cols(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    Ok(BidirectionalOutput {
        outputs,
        forward_state: forward.state,
        backward_state: backward.state,
    })
}

/// A whole-sequence layer: the unit [`StackedRnn`] composes.
pub trait SequenceLayer<T: Real> {
    fn describe(&self) -> String;

    fn input_size(&self) -> usize;

    fn output_size(&self) -> usize;

    /// One initial state per direction.
    fn zero_states(&self, batch: usize) -> Result<Vec<CellState<Tensor<T>>>>;

    fn manifest(&self) -> Vec<ParamSpec>;

    fn parameters(&self) -> Vec<&Tensor<T>>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn bind(&self, tape: &Tape<T>) -> Result<Vec<Bound>>;

    fn forward(
        &self,
        tape: &Tape<T>,
        bound: &[Bound],
        inputs: &[Var],
        lengths: Option<&[usize]>,
        states: Vec<CellState<Var>>,
        mode: &mut Mode<'_>,
    ) -> Result<(Vec<Var>, Vec<CellState<Var>>)>;
}

/// A cell applied left to right over the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanLayer<R> {
    cell: R,
}

impl<R> ScanLayer<R> {
    pub fn new(cell: R) -> Self {
        ScanLayer { cell }
    }

    pub fn cell(&self) -> &R {
        &self.cell
    }
}

fn one_state<T>(states: Vec<T>) -> Result<T> {
    let mut it = states.into_iter();
    match (it.next(), it.next()) {
        (Some(s), None) => Ok(s),
        _ => Err(Error::contract("unidirectional layer expects exactly one state")),
    }
}

impl<T: Real, R: Recurrent<T>> SequenceLayer<T> for ScanLayer<R> {
    fn describe(&self) -> String {
        format!("scan({})", self.cell.describe())
    }

    fn input_size(&self) -> usize {
        self.cell.input_size()
    }

    fn output_size(&self) -> usize {
        self.cell.output_size()
    }

    fn zero_states(&self, batch: usize) -> Result<Vec<CellState<Tensor<T>>>> {
        Ok(vec![self.cell.zero_state(batch)?])
    }

    fn manifest(&self) -> Vec<ParamSpec> {
        self.cell.manifest()
    }

    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.cell.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.cell.parameters_mut()
    }

    fn bind(&self, tape: &Tape<T>) -> Result<Vec<Bound>> {
        Ok(vec![self.cell.bind(tape)?])
    }

    fn forward(
        &self,
        tape: &Tape<T>,
        bound: &[Bound],
        inputs: &[Var],
        lengths: Option<&[usize]>,
        states: Vec<CellState<Var>>,
        mode: &mut Mode<'_>,
    ) -> Result<(Vec<Var>, Vec<CellState<Var>>)> {
        let out = scan(&self.cell, tape, &bound[0], inputs, lengths, one_state(states)?, mode)?;
        Ok((out.outputs, vec![out.state]))
    }
}

/// Forward and backward cells over the same sequence, outputs concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct Bidirectional<F, B> {
    fwd: F,
    bwd: B,
}

impl<F, B> Bidirectional<F, B> {
    pub fn new<T: Real>(fwd: F, bwd: B) -> Result<Self>
    where
        F: Recurrent<T>,
        B: Recurrent<T>,
    {
        if fwd.input_size() != bwd.input_size() || fwd.output_size() != bwd.output_size() {
            return Err(Error::contract(format!(
                "bidirectional directions disagree: forward {}→{}, backward {}→{}",
                fwd.input_size(),
                fwd.output_size(),
                bwd.input_size(),
                bwd.output_size()
            )));
        }
        Ok(Bidirectional { fwd, bwd })
    }
}

fn prefixed(prefix: &str, manifest: Vec<ParamSpec>) -> impl Iterator<Item = ParamSpec> + '_ {
    manifest.into_iter().map(move |mut p| {
        p.name = format!("{prefix}{}", p.name);
        p
    })
}

impl<T: Real, F: Recurrent<T>, B: Recurrent<T>> SequenceLayer<T> for Bidirectional<F, B> {
    fn describe(&self) -> String {
        format!("bidirectional({}, {})", self.fwd.describe(), self.bwd.describe())
    }

    fn input_size(&self) -> usize {
        self.fwd.input_size()
    }

    fn output_size(&self) -> usize {
        2 * self.fwd.output_size()
    }

    fn zero_states(&self, batch: usize) -> Result<Vec<CellState<Tensor<T>>>> {
        Ok(vec![self.fwd.zero_state(batch)?, self.bwd.zero_state(batch)?])
    }

    fn manifest(&self) -> Vec<ParamSpec> {
        prefixed("fwd.", self.fwd.manifest())
            .chain(prefixed("bwd.", self.bwd.manifest()))
            .collect()
    }

    fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut p = self.fwd.parameters();
        p.extend(self.bwd.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.fwd.parameters_mut();
        p.extend(self.bwd.parameters_mut());
        p
    }

    fn bind(&self, tape: &Tape<T>) -> Result<Vec<Bound>> {
        Ok(vec![self.fwd.bind(tape)?, self.bwd.bind(tape)?])
    }

    fn forward(
        &self,
        tape: &Tape<T>,
        bound: &[Bound],
        inputs: &[Var],
        lengths: Option<&[usize]>,
        states: Vec<CellState<Var>>,
        mode: &mut Mode<'_>,
    ) -> Result<(Vec<Var>, Vec<CellState<Var>>)> {
        let mut it = states.into_iter();
        let (Some(sf), Some(sb), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::contract("bidirectional layer expects two states"));
        };
        let out = bidirectional_scan(
            &self.fwd, &self.bwd, tape, &bound[0], &bound[1], inputs, lengths, (sf, sb), mode,
        )?;
        Ok((out.outputs, vec![out.forward_state, out.backward_state]))
    }
}

/// Inverted dropout on the wrapped component's output: surviving entries are
/// scaled by `1/(1-p)` in training; evaluation is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout<C> {
    inner: C,
    p: f64,
}

impl<C> Dropout<C> {
    pub fn new(inner: C, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout probability must be in [0, 1), got {p}")));
        }
        Ok(Dropout { inner, p })
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    pub fn probability(&self) -> f64 {
        self.p
    }
}

/// Samples an inverted-dropout mask with the shape of `like`.
pub fn dropout_mask<T: Real>(shape: &[usize], p: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let data = (0..n)
        .map(|_| if rng.next_uniform() < p { T::zero() } else { keep })
        .collect();
    Tensor::from_vec(shape, data)
}

fn apply_dropout<T: Real>(tape: &Tape<T>, v: Var, p: f64, mode: &mut Mode<'_>) -> Result<Var> {
    match mode.rng() {
        Some(rng) if p > 0.0 => {
            let mask = dropout_mask(&tape.shape(v)?, p, rng)?;
            tape.mul(v, tape.constant(mask)?)
        }
        _ => Ok(v),
    }
}

impl<T: Real, C: Recurrent<T>> Recurrent<T> for Dropout<C> {
    fn describe(&self) -> String {
        format!("dropout({}, {})", self.inner.describe(), self.p)
    }
    fn input_size(&self) -> usize {
        self.inner.input_size()
    }
    fn output_size(&self) -> usize {
        self.inner.output_size()
    }
    fn state_layout(&self) -> StateLayout {
        self.inner.state_layout()
    }
    fn zero_state(&self, batch: usize) -> Result<CellState<Tensor<T>>> {
        self.inner.zero_state(batch)
    }
    fn manifest(&self) -> Vec<ParamSpec> {
        self.inner.manifest()
    }
    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.inner.parameters()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.inner.parameters_mut()
    }
    fn bind(&self, tape: &Tape<T>) -> Result<Bound> {
        self.inner.bind(tape)
    }
    fn step(
        &self,
        tape: &Tape<T>,
        bound: &Bound,
        x: Var,
        state: &CellState<Var>,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, CellState<Var>)> {
        let (out, next) = self.inner.step(tape, bound, x, state, mode)?;
        Ok((apply_dropout(tape, out, self.p, mode)?, next))
    }
}

impl<T: Real, L: SequenceLayer<T>> SequenceLayer<T> for Dropout<L> {
    fn describe(&self) -> String {
        format!("dropout({}, {})", self.inner.describe(), self.p)
    }
    fn input_size(&self) -> usize {
        self.inner.input_size()
    }
    fn output_size(&self) -> usize {
        self.inner.output_size()
    }
    fn zero_states(&self, batch: usize) -> Result<Vec<CellState<Tensor<T>>>> {
        self.inner.zero_states(batch)
    }
    fn manifest(&self) -> Vec<ParamSpec> {
        self.inner.manifest()
    }
    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.inner.parameters()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.inner.parameters_mut()
    }
    fn bind(&self, tape: &Tape<T>) -> Result<Vec<Bound>> {
        self.inner.bind(tape)
    }
    fn forward(
        &self,
        tape: &Tape<T>,
        bound: &[Bound],
        inputs: &[Var],
        lengths: Option<&[usize]>,
        states: Vec<CellState<Var>>,
        mode: &mut Mode<'_>,
    ) -> Result<(Vec<Var>, Vec<CellState<Var>>)> {
        let (outs, states) = self.inner.forward(tape, bound, inputs, lengths, states, mode)?;
        let outs = outs
            .into_iter()
            .map(|o| apply_dropout(tape, o, self.p, mode))
            .collect::<Result<Vec<_>>>()?;
        Ok((outs, states))
    }
}

/// Adds the wrapped component's input to its output; sizes must agree.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual<C> {
    inner: C,
}

impl<C> Residual<C> {
    pub fn inner(&self) -> &C {
        &self.inner
    }

    fn check(input: usize, output: usize, what: &str) -> Result<()> {
        if input != output {
            return Err(Error::contract(format!(
                "residual around {what} needs input size == output size, got {input} vs {output}"
            )));
        }
        Ok(())
    }

    pub fn around_cell<T: Real>(inner: C) -> Result<Self>
    where
        C: Recurrent<T>,
    {
        Self::check(inner.input_size(), inner.output_size(), &inner.describe())?;
        Ok(Residual { inner })
    }

    pub fn around_layer<T: Real>(inner: C) -> Result<Self>
    where
        C: SequenceLayer<T>,
    {
        Self::check(inner.input_size(), inner.output_size(), &inner.describe())?;
        Ok(Residual { inner })
    }
}

impl<T: Real, C: Recurrent<T>> Recurrent<T> for Residual<C> {
    fn describe(&self) -> String {
        format!("residual({})", self.inner.describe())
    }
    fn input_size(&self) -> usize {
        self.inner.input_size()
    }
    fn output_size(&self) -> usize {
        self.inner.output_size()
    }
    fn state_layout(&self) -> StateLayout {
        self.inner.state_layout()
    }
    fn zero_state(&self, batch: usize) -> Result<CellState<Tensor<T>>> {
        self.inner.zero_state(batch)
    }
    fn manifest(&self) -> Vec<ParamSpec> {
        self.inner.manifest()
    }
    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.inner.parameters()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.inner.parameters_mut()
    }
    fn bind(&self, tape: &Tape<T>) -> Result<Bound> {
        self.inner.bind(tape)
    }
    fn step(
        &self,
        tape: &Tape<T>,
        bound: &Bound,
        x: Var,
        state: &CellState<Var>,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, CellState<Var>)> {
        let (out, next) = self.inner.step(tape, bound, x, state, mode)?;
        Ok((tape.add(out, x)?, next))
    }
}

impl<T: Real, L: SequenceLayer<T>> SequenceLayer<T> for Residual<L> {
    fn describe(&self) -> String {
        format!("residual({})", self.inner.describe())
    }
    fn input_size(&self) -> usize {
        self.inner.input_size()
    }
    fn output_size(&self) -> usize {
        self.inner.output_size()
    }
    fn zero_states(&self, batch: usize) -> Result<Vec<CellState<Tensor<T>>>> {
        self.inner.zero_states(batch)
    }
    fn manifest(&self) -> Vec<ParamSpec> {
        self.inner.manifest()
    }
    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.inner.parameters()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.inner.parameters_mut()
    }
    fn bind(&self, tape: &Tape<T>) -> Result<Vec<Bound>> {
        self.inner.bind(tape)
    }
    fn forward(
        &self,
        tape: &Tape<T>,
        bound: &[Bound],
        inputs: &[Var],
        lengths: Option<&[usize]>,
        states: Vec<CellState<Var>>,
        mode: &mut Mode<'_>,
    ) -> Result<(Vec<Var>, Vec<CellState<Var>>)> {
        let (outs, states) = self.inner.forward(tape, bound, inputs, lengths, states, mode)?;
        let outs = outs
            .iter()
            .zip(inputs)
            .map(|(&o, &x)| tape.add(o, x))
            .collect::<Result<Vec<_>>>()?;
        Ok((outs, states))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Wrapper {
    Dropout(f64),
    Residual,
}

/// Wraps a cell; the result is again a [`Recurrent`] and can be wrapped further.
pub fn wrap<'a, T: Real>(
    component: Box<dyn Recurrent<T> + 'a>,
    wrapper: Wrapper,
) -> Result<Box<dyn Recurrent<T> + 'a>> {
    Ok(match wrapper {
        Wrapper::Dropout(p) => Box::new(Dropout::new(component, p)?),
        Wrapper::Residual => Box::new(Residual::around_cell(component)?),
    })
}

/// Wraps a layer; the result is again a [`SequenceLayer`].
pub fn wrap_layer<'a, T: Real>(
    component: Box<dyn SequenceLayer<T> + 'a>,
    wrapper: Wrapper,
) -> Result<Box<dyn SequenceLayer<T> + 'a>> {
    Ok(match wrapper {
        Wrapper::Dropout(p) => Box::new(Dropout::new(component, p)?),
        Wrapper::Residual => Box::new(Residual::around_layer(component)?),
    })
}

impl<T: Real, L: SequenceLayer<T> + ?Sized> SequenceLayer<T> for Box<L> {
    fn describe(&self) -> String {
        (**self).describe()
    }
    fn input_size(&self) -> usize {
        (**self).input_size()
    }
    fn output_size(&self) -> usize {
        (**self).output_size()
    }
    fn zero_states(&self, batch: usize) -> Result<Vec<CellState<Tensor<T>>>> {
        (**self).zero_states(batch)
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
    fn bind(&self, tape: &Tape<T>) -> Result<Vec<Bound>> {
        (**self).bind(tape)
    }
    fn forward(
        &self,
        tape: &Tape<T>,
        bound: &[Bound],
        inputs: &[Var],
        lengths: Option<&[usize]>,
        states: Vec<CellState<Var>>,
        mode: &mut Mode<'_>,
    ) -> Result<(Vec<Var>, Vec<CellState<Var>>)> {
        (**self).forward(tape, bound, inputs, lengths, states, mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Bidirectional,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Bidirectional => "bidirectional",
        }
    }

    pub fn count(self) -> usize {
        match self {
            Direction::Forward => 1,
            Direction::Bidirectional => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    /// Cell of the first layer; deeper layers use the same kind and hidden
    /// size with their input size set to the previous layer's output.
    pub cell: CellSpec,
    pub direction: Direction,
    pub layers: usize,
    /// Inter-layer dropout probability in `[0, 1)`.
    pub dropout: f64,
    pub residual: bool,
}

impl LayerSpec {
    pub fn single(cell: CellSpec) -> Self {
        LayerSpec {
            cell,
            direction: Direction::Forward,
            layers: 1,
            dropout: 0.0,
            residual: false,
        }
    }

    pub fn output_size(&self) -> usize {
        self.cell.hidden_size * self.direction.count()
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        if self.layers == 0 {
            return Err(Error::contract("stack depth must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract(format!(
                "dropout probability must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.residual {
            for l in 0..self.layers {
                let input = self.layer_input_size(l);
                if input != self.output_size() {
                    return Err(Error::contract(format!(
                        "residual layer {l}: input size {input} != output size {}",
                        self.output_size()
                    )));
                }
            }
        }
        Ok(())
    }

    fn layer_input_size(&self, layer: usize) -> usize {
        if layer == 0 {
            self.cell.input_size
        } else {
            self.output_size()
        }
    }

    pub fn layer_cell(&self, layer: usize) -> CellSpec {
        CellSpec {
            input_size: self.layer_input_size(layer),
            ..self.cell
        }
    }
}

/// Layers applied in sequence; layer `l` consumes the outputs of layer `l-1`.
pub struct StackedRnn<T: Real = f64> {
    layers: Vec<Box<dyn SequenceLayer<T>>>,
}

impl<T: Real> std::fmt::Debug for StackedRnn<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.layers.iter().map(|l| l.describe()))
            .finish()
    }
}

impl<T: Real> StackedRnn<T> {
    /// Builds and initializes the layers a [`LayerSpec`] describes.
    pub fn new(spec: &LayerSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut layers: Vec<Box<dyn SequenceLayer<T>>> = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let cell_spec = spec.layer_cell(l);
            let mut layer: Box<dyn SequenceLayer<T>> = match spec.direction {
                Direction::Forward => Box::new(ScanLayer::new(Cell::<T>::new(cell_spec, rng)?)),
                Direction::Bidirectional => Box::new(Bidirectional::new(
                    Cell::<T>::new(cell_spec, rng)?,
                    Cell::<T>::new(cell_spec, rng)?,
                )?),
            };
            if spec.residual {
                layer = wrap_layer(layer, Wrapper::Residual)?;
            }
            if spec.dropout > 0.0 && l + 1 < spec.layers {
                layer = wrap_layer(layer, Wrapper::Dropout(spec.dropout))?;
            }
            layers.push(layer);
        }
        Self::from_layers(layers)
    }

    /// Checks that each layer's input size equals the previous output size.
    pub fn from_layers(layers: Vec<Box<dyn SequenceLayer<T>>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("stack needs at least one layer"));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].input_size() != pair[0].output_size() {
                return Err(Error::dim(
                    format!("stacked layer {}", l + 1),
                    &[pair[0].output_size()],
                    &[pair[1].input_size()],
                ));
            }
        }
        Ok(StackedRnn { layers })
    }

    pub fn layers(&self) -> &[Box<dyn SequenceLayer<T>>] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].output_size()
    }

    /// Parameter manifest with `l{index}.` prefixes.
    pub fn manifest(&self) -> Vec<ParamSpec> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| {
                layer.manifest().into_iter().map(move |mut p| {
                    p.name = format!("l{l}.{}", p.name);
                    p
                })
            })
            .collect()
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.parameters_mut())
            .collect()
    }

    pub fn zero_states(&self, batch: usize) -> Result<Vec<Vec<CellState<Tensor<T>>>>> {
        self.layers.iter().map(|l| l.zero_states(batch)).collect()
    }

    pub fn bind(&self, tape: &Tape<T>) -> Result<Vec<Vec<Bound>>> {
        self.layers.iter().map(|l| l.bind(tape)).collect()
    }

    /// Runs every layer; `states0` defaults to zero states.
    pub fn forward(
        &self,
        tape: &Tape<T>,
        bound: &[Vec<Bound>],
        inputs: &[Var],
        lengths: Option<&[usize]>,
        states0: Option<Vec<Vec<CellState<Var>>>>,
        mode: &mut Mode<'_>,
    ) -> Result<(Vec<Var>, Vec<Vec<CellState<Var>>>)> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("stacked forward over an empty sequence"))?;
        let batch = tape.shape(*first)?[0];
        let states0 = match states0 {
            Some(s) => s,
            None => self
                .zero_states(batch)?
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|s| s.try_map(|t| tape.constant(t.clone())))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if states0.len() != self.layers.len() {
            return Err(Error::contract(format!(
                "expected initial states for {} layers, got {}",
                self.layers.len(),
                states0.len()
            )));
        }
        let mut current = inputs.to_vec();
        let mut finals = Vec::with_capacity(self.layers.len());
        for (l, (layer, state)) in self.layers.iter().zip(states0).enumerate() {
            let width = tape.shape(current[0])?[1];
            if width != layer.input_size() {
                return Err(Error::dim(format!("stacked layer {l}"), &[layer.input_size()], &[width]));
            }
            let (outs, st) = layer.forward(tape, &bound[l], &current, lengths, state, mode)?;
            current = outs;
            finals.push(st);
        }
        Ok((current, finals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;

    fn seq(steps: usize, batch: usize, features: usize, seed: u64) -> SequenceBatch<f64> {
        let mut rng = Rng::new(seed);
        let data = (0..steps * batch * features)
            .map(|_| 2.0 * rng.next_uniform() - 1.0)
            .collect();
        SequenceBatch::new(Tensor::from_vec(&[steps, batch, features], data).unwrap(), None).unwrap()
    }

    #[test]
    fn batch_validation() {
        let t = Tensor::<f64>::zeros(&[4, 2, 3]).unwrap();
        assert!(SequenceBatch::new(t.clone(), Some(vec![4, 0])).is_err());
        assert!(SequenceBatch::new(t.clone(), Some(vec![5, 1])).is_err());
        assert!(SequenceBatch::new(t.clone(), Some(vec![1])).is_err());
        assert!(SequenceBatch::new(Tensor::<f64>::zeros(&[4, 2]).unwrap(), None).is_err());
        assert!(SequenceBatch::new(t, Some(vec![4, 1])).is_ok());
    }

    #[test]
    fn batch_major_ingest_transposes() {
        // [B=2, T=3, F=1]
        let bm = Tensor::<f64>::from_vec(&[2, 3, 1], vec![1., 2., 3., 10., 20., 30.]).unwrap();
        let s = SequenceBatch::from_batch_major(&bm, None).unwrap();
        assert_eq!(s.data().shape(), &[3, 2, 1]);
        assert_eq!(s.data().data(), &[1., 10., 2., 20., 3., 30.]);
    }

    #[test]
    fn feature_mismatch_is_dimension_error() {
        let spec = CellSpec::new(CellKind::Gru, 3, 4).unwrap();
        let cell = Cell::<f64>::new(spec, &mut Rng::new(0)).unwrap();
        let tape = Tape::new();
        let bound = cell.bind(&tape).unwrap();
        let r = scan_batch(&cell, &tape, &bound, &seq(2, 1, 2, 0), None, &mut Mode::Eval);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn dropout_probability_range() {
        assert!(Dropout::new((), 1.0).is_err());
        assert!(Dropout::new((), -0.1).is_err());
        assert!(Dropout::new((), 0.0).is_ok());
    }

    #[test]
    fn residual_rejects_size_mismatch() {
        let spec = CellSpec::new(CellKind::Lstm, 3, 4).unwrap();
        let cell = Cell::<f64>::new(spec, &mut Rng::new(0)).unwrap();
        assert!(matches!(
            wrap(Box::new(cell), Wrapper::Residual),
            Err(Error::Contract(_))
        ));
        let bad = LayerSpec {
            residual: true,
            ..LayerSpec::single(spec)
        };
        assert!(StackedRnn::<f64>::new(&bad, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn stack_chain_mismatch_names_layer() {
        let a = CellSpec::new(CellKind::Elman { activation: crate::cells::Activation::Tanh }, 2, 3).unwrap();
        let b = CellSpec::new(CellKind::Elman { activation: crate::cells::Activation::Tanh }, 4, 3).unwrap();
        let mut rng = Rng::new(0);
        let layers: Vec<Box<dyn SequenceLayer<f64>>> = vec![
            Box::new(ScanLayer::new(Cell::new(a, &mut rng).unwrap())),
            Box::new(ScanLayer::new(Cell::new(b, &mut rng).unwrap())),
        ];
        match StackedRnn::from_layers(layers) {
            Err(Error::Dimension { op, .. }) => assert!(op.contains("layer 1"), "{op}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bidirectional_stack_feeds_two_h() {
        let spec = LayerSpec {
            cell: CellSpec::new(CellKind::Gru, 3, 4).unwrap(),
            direction: Direction::Bidirectional,
            layers: 2,
            dropout: 0.0,
            residual: false,
        };
        let stack = StackedRnn::<f64>::new(&spec, &mut Rng::new(1)).unwrap();
        assert_eq!(stack.layers()[1].input_size(), 8);
        assert_eq!(stack.output_size(), 8);
        let names: Vec<_> = stack.manifest().into_iter().map(|p| p.name).collect();
        assert!(names.contains(&"l1.bwd.W_r".to_string()));
        assert_eq!(stack.manifest()[0].shape, vec![4, 3]);
    }

    #[test]
    fn reversal_respects_lengths() {
        assert_eq!(
            reversal_picks(4, &[4, 2]),
            vec![vec![3, 1], vec![2, 0], vec![1, 2], vec![0, 3]]
        );
    }
}
