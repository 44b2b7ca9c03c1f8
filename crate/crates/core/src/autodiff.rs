//! Reverse-mode differentiation over an append-only tape.
//!
//! Every operation evaluates eagerly, appends a node holding its value and
//! the ids of its inputs, and returns a [`Var`] handle. Inputs always have
//! smaller ids than the node consuming them, so the node vector is already a
//! topological order and [`Tape::backward`] only has to walk it in reverse.
//!
//! Gradients of parameter leaves accumulate across `backward` calls until
//! [`Tape::zero_grad`] is called.

use std::cell::RefCell;
use std::ops::Range;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn id(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Tanh,
    Relu,
    Neg,
    Square,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

/// How the right operand of a binary op is laid over the left one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    /// Vector of length `cols` added to every row.
    Row,
    /// Single element applied everywhere.
    Scalar,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, trans_b: bool },
    Binary { kind: BinaryOp, a: usize, b: usize, bcast: Broadcast },
    Unary { kind: UnaryOp, a: usize },
    Affine { a: usize, scale: T },
    Reduce { kind: ReduceOp, a: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    SliceCols { a: usize, start: usize, end: usize },
    Transpose { a: usize },
    LogSoftmax { a: usize },
    Gather { a: usize, indices: Vec<usize> },
    RowMux { sources: Vec<usize>, pick: Vec<usize> },
}

impl<T> Op<T> {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Binary { kind, .. } => binary_tag(*kind),
            Op::Unary { kind, .. } => match kind {
                UnaryOp::Sigmoid => "sigmoid",
                UnaryOp::Tanh => "tanh",
                UnaryOp::Relu => "relu",
                UnaryOp::Neg => "neg",
                UnaryOp::Square => "square",
                UnaryOp::Log => "log",
            },
            Op::Affine { .. } => "affine",
            Op::Reduce { kind, .. } => match kind {
                ReduceOp::Sum => "sum",
                ReduceOp::Mean => "mean",
            },
            Op::ConcatRows { .. } => "concat_rows",
            Op::ConcatCols { .. } => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::Transpose { .. } => "transpose",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Gather { .. } => "gather",
            Op::RowMux { .. } => "row_mux",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b, .. } | Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Unary { a, .. }
            | Op::Affine { a, .. }
            | Op::Reduce { a, .. }
            | Op::SliceCols { a, .. }
            | Op::Transpose { a }
            | Op::LogSoftmax { a }
            | Op::Gather { a, .. } => vec![*a],
            Op::ConcatRows { parts } | Op::ConcatCols { parts } => parts.clone(),
            Op::RowMux { sources, .. } => sources.clone(),
        }
    }
}

#[derive(Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Read-only view of a recorded node.
#[derive(Debug, Clone)]
pub struct NodeInfo {
    pub id: usize,
    pub op: &'static str,
    pub inputs: Vec<usize>,
    pub shape: Vec<usize>,
}

pub struct Tape<T: Real = f64> {
    id: u32,
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<Vec<Option<Tensor<T>>>>,
}

impl<T: Real> std::fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.len())
            .finish()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(feature = "fault-injection")]
thread_local! {
    static CORRUPT_TANH_BACKWARD: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Makes the tanh backward rule wrong on the current thread (test fixture).
#[cfg(feature = "fault-injection")]
pub fn set_corrupt_tanh_backward(on: bool) {
    CORRUPT_TANH_BACKWARD.with(|c| c.set(on));
}

fn tanh_backward_corrupted() -> bool {
    #[cfg(feature = "fault-injection")]
    {
        CORRUPT_TANH_BACKWARD.with(|c| c.get())
    }
    #[cfg(not(feature = "fault-injection"))]
    {
        false
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_info(&self, v: Var) -> Result<NodeInfo> {
        let i = self.index(v)?;
        let nodes = self.nodes.borrow();
        Ok(NodeInfo {
            id: i,
            op: nodes[i].op.tag(),
            inputs: nodes[i].op.inputs(),
            shape: nodes[i].value.shape().to_vec(),
        })
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant input.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push_unchecked(Op::Leaf, value, requires_grad))
    }

    pub fn value(&self, v: Var) -> Result<Tensor<T>> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].value.clone())
    }

    pub fn shape(&self, v: Var) -> Result<Vec<usize>> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].value.shape().to_vec())
    }

    /// Accumulated gradient of a leaf; zeros if no backward pass reached it.
    pub fn grad(&self, v: Var) -> Result<Tensor<T>> {
        let i = self.index(v)?;
        let nodes = self.nodes.borrow();
        if !matches!(nodes[i].op, Op::Leaf) {
            return Err(Error::contract(format!(
                "gradients are retained for leaves only; node {i} is `{}`",
                nodes[i].op.tag()
            )));
        }
        let grads = self.leaf_grads.borrow();
        Ok(match grads.get(i).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros_unchecked(nodes[i].value.shape()),
        })
    }

    pub fn zero_grad(&self) {
        self.leaf_grads.borrow_mut().clear();
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::contract("variable belongs to a different tape"));
        }
        Ok(v.index as usize)
    }

    fn push_unchecked(&self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn push(&self, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.tag() });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    /// Sign pattern (`input > 0`) of every relu input on the tape, in node order.
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Unary {
                    kind: UnaryOp::Relu,
                    a,
                } => Some(a),
                _ => None,
            })
            .flat_map(|a| nodes[a].value.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    // ---- operations -------------------------------------------------------

    /// Matrix product `a · b` for `[m, k] × [k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Matrix product with the right operand transposed: `a · bᵀ` for `[m, k] × [n, k]`.
    pub fn matmul_bt(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[ia].value, &nodes[ib].value);
            let op = if trans_b { "matmul_bt" } else { "matmul" };
            let (m, k) = match av.shape() {
                [m, k] => (*m, *k),
                _ => return Err(Error::dim(op, av.shape(), bv.shape())),
            };
            let (bk, n) = match (bv.shape(), trans_b) {
                ([r, c], false) => (*r, *c),
                ([r, c], true) => (*c, *r),
                _ => return Err(Error::dim(op, av.shape(), bv.shape())),
            };
            if bk != k {
                return Err(Error::dim(op, av.shape(), bv.shape()));
            }
            let mut out = vec![T::zero(); m * n];
            let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
            T::gemm(
                m,
                k,
                n,
                av.data(),
                k as isize,
                1,
                bv.data(),
                rsb,
                csb,
                T::zero(),
                &mut out,
                n as isize,
                1,
            );
            Tensor::from_parts(vec![m, n], out)
        };
        self.push(
            Op::MatMul {
                a: ia,
                b: ib,
                trans_b,
            },
            value,
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// Elementwise op. `b` may equal `a` in shape, be a row vector matching
    /// the last extent of a matrix `a`, or be a single element.
    pub fn binary(&self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (value, bcast) = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[ia].value, &nodes[ib].value);
            let bcast = broadcast_kind(av.shape(), bv.shape())
                .ok_or_else(|| Error::dim(binary_tag(kind), av.shape(), bv.shape()))?;
            let f = |x: T, y: T| match kind {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
            };
            let ad = av.data();
            let bd = bv.data();
            let data: Vec<T> = match bcast {
                Broadcast::None => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
                Broadcast::Scalar => ad.iter().map(|&x| f(x, bd[0])).collect(),
                Broadcast::Row => {
                    let cols = bd.len();
                    ad.iter()
                        .enumerate()
                        .map(|(i, &x)| f(x, bd[i % cols]))
                        .collect()
                }
            };
            (Tensor::from_parts(av.shape().to_vec(), data), bcast)
        };
        self.push(
            Op::Binary {
                kind,
                a: ia,
                b: ib,
                bcast,
            },
            value,
        )
    }

    pub fn unary(&self, kind: UnaryOp, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[ia].value;
            if kind == UnaryOp::Log {
                if let Some(bad) = av.data().iter().find(|&&v| v <= T::zero()) {
                    return Err(Error::Domain {
                        op: "log",
                        msg: format!("non-positive input {bad}"),
                    });
                }
            }
            av.map(|x| match kind {
                UnaryOp::Sigmoid => sigmoid(x),
                UnaryOp::Tanh => x.tanh(),
                UnaryOp::Relu => {
                    if x > T::zero() {
                        x
                    } else {
                        T::zero()
                    }
                }
                UnaryOp::Neg => -x,
                UnaryOp::Square => x * x,
                UnaryOp::Log => x.ln(),
            })
        };
        self.push(Op::Unary { kind, a: ia }, value)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    /// Sigmoid of a single trainable raw value, i.e. a gate in (0, 1).
    pub fn scalar_gate(&self, raw: Var) -> Result<Var> {
        let shape = self.shape(raw)?;
        if shape != [1] {
            return Err(Error::dim("scalar_gate", &shape, &[1]));
        }
        self.sigmoid(raw)
    }

    /// `scale * a + shift`, elementwise with constant coefficients.
    pub fn affine(&self, a: Var, scale: T, shift: T) -> Result<Var> {
        let ia = self.index(a)?;
        let value = self.nodes.borrow()[ia].value.map(|x| scale * x + shift);
        self.push(Op::Affine { a: ia, scale }, value)
    }

    pub fn scale(&self, a: Var, factor: T) -> Result<Var> {
        self.affine(a, factor, T::zero())
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&self, a: Var) -> Result<Var> {
        self.affine(a, -T::one(), T::one())
    }

    pub fn reduce(&self, kind: ReduceOp, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[ia].value;
            let s = av.sum();
            match kind {
                ReduceOp::Sum => s,
                ReduceOp::Mean => {
                    if av.is_empty() {
                        return Err(Error::Domain {
                            op: "mean",
                            msg: "mean of an empty tensor".into(),
                        });
                    }
                    s / T::from_usize(av.len()).unwrap()
                }
            }
        };
        self.push(Op::Reduce { kind, a: ia }, Tensor::scalar(value))
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a)
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a)
    }

    /// Joins vectors end to end, or matrices with equal column counts top to bottom.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let ids = parts
            .iter()
            .map(|&p| self.index(p))
            .collect::<Result<Vec<_>>>()?;
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[*ids.first().ok_or_else(|| Error::contract("concat of nothing"))?]
                .value;
            let mut rows = 0;
            let mut data = Vec::new();
            for &i in &ids {
                let v = &nodes[i].value;
                match (first.shape(), v.shape()) {
                    ([_], [n]) => rows += n,
                    ([_, c], [r, c2]) if c == c2 => rows += r,
                    _ => return Err(Error::dim("concat_rows", first.shape(), v.shape())),
                }
                data.extend_from_slice(v.data());
            }
            let shape = match first.shape() {
                [_] => vec![rows],
                [_, c] => vec![rows, *c],
                _ => unreachable!(),
            };
            Tensor::from_parts(shape, data)
        };
        self.push(Op::ConcatRows { parts: ids }, value)
    }

    /// Joins along the last axis: vectors end to end, matrices side by side.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let ids = parts
            .iter()
            .map(|&p| self.index(p))
            .collect::<Result<Vec<_>>>()?;
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[*ids.first().ok_or_else(|| Error::contract("concat of nothing"))?]
                .value;
            let rows = match first.shape() {
                [_] => 1,
                [r, _] => *r,
                _ => return Err(Error::dim("concat_cols", first.shape(), &[])),
            };
            let mut total = 0;
            for &i in &ids {
                let v = &nodes[i].value;
                match (first.shape(), v.shape()) {
                    ([_], [n]) => total += n,
                    ([r, _], [r2, c]) if r == r2 => total += c,
                    _ => return Err(Error::dim("concat_cols", first.shape(), v.shape())),
                }
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &i in &ids {
                    let v = &nodes[i].value;
                    let c = v.as_matrix_dims().1;
                    data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
                }
            }
            let shape = match first.shape() {
                [_] => vec![total],
                _ => vec![rows, total],
            };
            Tensor::from_parts(shape, data)
        };
        self.push(Op::ConcatCols { parts: ids }, value)
    }

    /// Columns `range` of a matrix (or elements of a vector).
    pub fn slice_cols(&self, a: Var, range: Range<usize>) -> Result<Var> {
        let ia = self.index(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[ia].value;
            let (rows, cols) = match av.shape() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => return Err(Error::dim("slice_cols", av.shape(), &[range.start, range.end])),
            };
            if range.start >= range.end || range.end > cols {
                return Err(Error::dim("slice_cols", av.shape(), &[range.start, range.end]));
            }
            let w = range.end - range.start;
            let mut data = Vec::with_capacity(rows * w);
            for r in 0..rows {
                data.extend_from_slice(&av.data()[r * cols + range.start..r * cols + range.end]);
            }
            let shape = if av.rank() == 1 { vec![w] } else { vec![rows, w] };
            Tensor::from_parts(shape, data)
        };
        self.push(
            Op::SliceCols {
                a: ia,
                start: range.start,
                end: range.end,
            },
            value,
        )
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[ia].value;
            if av.rank() != 2 {
                return Err(Error::dim("transpose", av.shape(), &[]));
            }
            av.transpose()?
        };
        self.push(Op::Transpose { a: ia }, value)
    }

    /// Row-wise log-softmax of a matrix, computed with max subtraction.
    pub fn log_softmax(&self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[ia].value;
            if av.rank() > 2 || av.is_empty() {
                return Err(Error::dim("log_softmax", av.shape(), &[]));
            }
            let (rows, cols) = av.as_matrix_dims();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let row = &av.data()[r * cols..(r + 1) * cols];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
                data.extend(row.iter().map(|&x| x - lse));
            }
            Tensor::from_parts(av.shape().to_vec(), data)
        };
        self.push(Op::LogSoftmax { a: ia }, value)
    }

    /// Picks `a[r, indices[r]]` for every row, giving a vector.
    pub fn gather(&self, a: Var, indices: &[usize]) -> Result<Var> {
        let ia = self.index(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[ia].value;
            let (rows, cols) = match av.shape() {
                [r, c] => (*r, *c),
                _ => return Err(Error::dim("gather", av.shape(), &[indices.len()])),
            };
            if indices.len() != rows {
                return Err(Error::dim("gather", av.shape(), &[indices.len()]));
            }
            if let Some(&bad) = indices.iter().find(|&&j| j >= cols) {
                return Err(Error::contract(format!(
                    "gather index {bad} out of range for {cols} columns"
                )));
            }
            Tensor::from_parts(
                vec![rows],
                indices
                    .iter()
                    .enumerate()
                    .map(|(r, &j)| av.data()[r * cols + j])
                    .collect(),
            )
        };
        self.push(
            Op::Gather {
                a: ia,
                indices: indices.to_vec(),
            },
            value,
        )
    }

    /// Row `r` of the result is row `r` of `sources[pick[r]]`. All sources share one shape.
    pub fn row_mux(&self, sources: &[Var], pick: &[usize]) -> Result<Var> {
        let ids = sources
            .iter()
            .map(|&p| self.index(p))
            .collect::<Result<Vec<_>>>()?;
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[*ids.first().ok_or_else(|| Error::contract("row_mux of nothing"))?]
                .value;
            let (rows, cols) = match first.shape() {
                [r, c] => (*r, *c),
                _ => return Err(Error::dim("row_mux", first.shape(), &[pick.len()])),
            };
            if pick.len() != rows {
                return Err(Error::dim("row_mux", first.shape(), &[pick.len()]));
            }
            for &i in &ids {
                if nodes[i].value.shape() != first.shape() {
                    return Err(Error::dim("row_mux", first.shape(), nodes[i].value.shape()));
                }
            }
            let mut data = Vec::with_capacity(rows * cols);
            for (r, &s) in pick.iter().enumerate() {
                let src = &nodes[*ids
                    .get(s)
                    .ok_or_else(|| Error::contract(format!("row_mux source {s} out of range")))?]
                .value;
                data.extend_from_slice(&src.data()[r * cols..(r + 1) * cols]);
            }
            Tensor::from_parts(vec![rows, cols], data)
        };
        self.push(
            Op::RowMux {
                sources: ids,
                pick: pick.to_vec(),
            },
            value,
        )
    }

    /// `x · wᵀ + b`, the affine map every cell gate is built from.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let p = self.matmul_bt(x, w)?;
        match b {
            Some(b) => self.add(p, b),
            None => Ok(p),
        }
    }

    // ---- backward ---------------------------------------------------------

    /// Back-propagates from a single-element `root`, adding into leaf gradients.
    pub fn backward(&self, root: Var) -> Result<()> {
        let r = self.index(root)?;
        let nodes = self.nodes.borrow();
        if nodes[r].value.shape() != [1] {
            return Err(Error::contract(format!(
                "backward root must have shape [1], got {:?}",
                nodes[r].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; r + 1];
        grads[r] = Some(Tensor::scalar(T::one()));
        let mut leaf_out: Vec<(usize, Tensor<T>)> = Vec::new();

        for i in (0..=r).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaf_out.push((i, g)),
                op => backprop(op, &node.value, &g, &nodes, &mut grads),
            }
        }
        drop(nodes);

        let mut acc = self.leaf_grads.borrow_mut();
        for (i, g) in leaf_out {
            if acc.len() <= i {
                acc.resize(i + 1, None);
            }
            match &mut acc[i] {
                Some(existing) => existing.add_assign(&g)?,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn binary_tag(kind: BinaryOp) -> &'static str {
    match kind {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
    }
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    if a == b {
        return Some(Broadcast::None);
    }
    match (a, b) {
        (_, [1]) => Some(Broadcast::Scalar),
        ([_, c], [n]) if c == n => Some(Broadcast::Row),
        _ => None,
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn slot<'g, T: Real>(
    grads: &'g mut [Option<Tensor<T>>],
    nodes: &[Node<T>],
    i: usize,
) -> Option<&'g mut Tensor<T>> {
    if !nodes[i].requires_grad {
        return None;
    }
    Some(grads[i].get_or_insert_with(|| Tensor::zeros_unchecked(nodes[i].value.shape())))
}

fn backprop<T: Real>(
    op: &Op<T>,
    out: &Tensor<T>,
    g: &Tensor<T>,
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
) {
    let gd = g.data();
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b, trans_b } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = out.shape()[1];
            if let Some(ga) = slot(grads, nodes, *a) {
                // dA = dC · Bᵀ (or dC · B when B was used transposed)
                let (rsb, csb) = if *trans_b { (k as isize, 1) } else { (1, n as isize) };
                T::gemm(
                    m,
                    n,
                    k,
                    gd,
                    n as isize,
                    1,
                    bv.data(),
                    rsb,
                    csb,
                    T::one(),
                    ga.data_mut(),
                    k as isize,
                    1,
                );
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                if *trans_b {
                    // dB = dCᵀ · A, shape [n, k]
                    T::gemm(
                        n,
                        m,
                        k,
                        gd,
                        1,
                        n as isize,
                        av.data(),
                        k as isize,
                        1,
                        T::one(),
                        gb.data_mut(),
                        k as isize,
                        1,
                    );
                } else {
                    // dB = Aᵀ · dC, shape [k, n]
                    T::gemm(
                        k,
                        m,
                        n,
                        av.data(),
                        1,
                        k as isize,
                        gd,
                        n as isize,
                        1,
                        T::one(),
                        gb.data_mut(),
                        n as isize,
                        1,
                    );
                }
            }
        }
        Op::Binary { kind, a, b, bcast } => {
            let ad = nodes[*a].value.data();
            let bd = nodes[*b].value.data();
            let bi = |i: usize| match bcast {
                Broadcast::None => i,
                Broadcast::Scalar => 0,
                Broadcast::Row => i % bd.len(),
            };
            if let Some(ga) = slot(grads, nodes, *a) {
                let ga = ga.data_mut();
                match kind {
                    BinaryOp::Add | BinaryOp::Sub => {
                        for (x, &d) in ga.iter_mut().zip(gd) {
                            *x += d;
                        }
                    }
                    BinaryOp::Mul => {
                        for (i, (x, &d)) in ga.iter_mut().zip(gd).enumerate() {
                            *x += d * bd[bi(i)];
                        }
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                let gb = gb.data_mut();
                for (i, &d) in gd.iter().enumerate() {
                    let contrib = match kind {
                        BinaryOp::Add => d,
                        BinaryOp::Sub => -d,
                        BinaryOp::Mul => d * ad[i],
                    };
                    gb[bi(i)] += contrib;
                }
            }
        }
        Op::Unary { kind, a } => {
            let xd = nodes[*a].value.data();
            let yd = out.data();
            let corrupt = tanh_backward_corrupted();
            if let Some(ga) = slot(grads, nodes, *a) {
                for (i, x) in ga.data_mut().iter_mut().enumerate() {
                    let local = match kind {
                        UnaryOp::Sigmoid => yd[i] * (T::one() - yd[i]),
                        UnaryOp::Tanh if corrupt => T::one() - yd[i],
                        UnaryOp::Tanh => T::one() - yd[i] * yd[i],
                        UnaryOp::Relu => {
                            if xd[i] > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                        UnaryOp::Neg => -T::one(),
                        UnaryOp::Square => xd[i] + xd[i],
                        UnaryOp::Log => T::one() / xd[i],
                    };
                    *x += gd[i] * local;
                }
            }
        }
        Op::Affine { a, scale } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for (x, &d) in ga.data_mut().iter_mut().zip(gd) {
                    *x += d * *scale;
                }
            }
        }
        Op::Reduce { kind, a } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                let n = ga.len();
                let d = match kind {
                    ReduceOp::Sum => gd[0],
                    ReduceOp::Mean => gd[0] / T::from_usize(n).unwrap(),
                };
                for x in ga.data_mut() {
                    *x += d;
                }
            }
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                if let Some(gp) = slot(grads, nodes, p) {
                    for (x, &d) in gp.data_mut().iter_mut().zip(&gd[offset..offset + len]) {
                        *x += d;
                    }
                }
                offset += len;
            }
        }
        Op::ConcatCols { parts } => {
            let (rows, total) = out.as_matrix_dims();
            let mut col = 0;
            for &p in parts {
                let c = nodes[p].value.as_matrix_dims().1;
                if let Some(gp) = slot(grads, nodes, p) {
                    let gp = gp.data_mut();
                    for r in 0..rows {
                        for j in 0..c {
                            gp[r * c + j] += gd[r * total + col + j];
                        }
                    }
                }
                col += c;
            }
        }
        Op::SliceCols { a, start, end } => {
            let cols = nodes[*a].value.as_matrix_dims().1;
            let w = end - start;
            if let Some(ga) = slot(grads, nodes, *a) {
                let ga = ga.data_mut();
                for (r, chunk) in gd.chunks(w).enumerate() {
                    for (j, &d) in chunk.iter().enumerate() {
                        ga[r * cols + start + j] += d;
                    }
                }
            }
        }
        Op::Transpose { a } => {
            let (rows, cols) = out.as_matrix_dims();
            if let Some(ga) = slot(grads, nodes, *a) {
                let ga = ga.data_mut();
                for i in 0..rows {
                    for j in 0..cols {
                        ga[j * rows + i] += gd[i * cols + j];
                    }
                }
            }
        }
        Op::LogSoftmax { a } => {
            let (rows, cols) = out.as_matrix_dims();
            let yd = out.data();
            if let Some(ga) = slot(grads, nodes, *a) {
                let ga = ga.data_mut();
                for r in 0..rows {
                    let row = r * cols..(r + 1) * cols;
                    let gsum: T = gd[row.clone()].iter().copied().sum();
                    for j in row {
                        ga[j] += gd[j] - yd[j].exp() * gsum;
                    }
                }
            }
        }
        Op::Gather { a, indices } => {
            let cols = nodes[*a].value.as_matrix_dims().1;
            if let Some(ga) = slot(grads, nodes, *a) {
                let ga = ga.data_mut();
                for (r, &j) in indices.iter().enumerate() {
                    ga[r * cols + j] += gd[r];
                }
            }
        }
        Op::RowMux { sources, pick } => {
            let cols = out.as_matrix_dims().1;
            for (si, &s) in sources.iter().enumerate() {
                if let Some(gs) = slot(grads, nodes, s) {
                    let gs = gs.data_mut();
                    for (r, _) in pick.iter().enumerate().filter(|(_, &p)| p == si) {
                        for j in r * cols..(r + 1) * cols {
                            gs[j] += gd[j];
                        }
                    }
                }
            }
        }
    }
}
