use crate::error::{Error, Result};

/// Declared arity of a cell's hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateLayout {
    Single(&'static str),
    Double([&'static str; 2]),
    Custom(&'static [&'static str]),
}

impl StateLayout {
    pub fn arity_name(&self) -> &'static str {
        match self {
            StateLayout::Single(_) => "single",
            StateLayout::Double(_) => "double",
            StateLayout::Custom(_) => "custom",
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        match self {
            StateLayout::Single(n) => vec![n],
            StateLayout::Double(ns) => ns.to_vec(),
            StateLayout::Custom(ns) => ns.to_vec(),
        }
    }
}

/// Hidden state of a cell. The first part is always the primary hidden state.
///
/// `S` is [`Tensor`](crate::Tensor) for values held outside a tape and
/// [`Var`](crate::Var) for state threaded through one.
#[derive(Debug, Clone, PartialEq)]
pub enum CellState<S> {
    Single(S),
    Double(S, S),
    Custom(Vec<(&'static str, S)>),
}

impl<S> CellState<S> {
    pub fn primary(&self) -> &S {
        match self {
            CellState::Single(h) | CellState::Double(h, _) => h,
            CellState::Custom(parts) => &parts[0].1,
        }
    }

    pub fn parts(&self) -> Vec<&S> {
        match self {
            CellState::Single(h) => vec![h],
            CellState::Double(h, c) => vec![h, c],
            CellState::Custom(parts) => parts.iter().map(|(_, s)| s).collect(),
        }
    }

    pub fn named_parts(&self) -> Vec<(&'static str, &S)> {
        match self {
            CellState::Single(h) => vec![("h", h)],
            CellState::Double(h, c) => vec![("h", h), ("c", c)],
            CellState::Custom(parts) => parts.iter().map(|(n, s)| (*n, s)).collect(),
        }
    }

    pub fn matches_layout(&self, layout: &StateLayout) -> bool {
        match (self, layout) {
            (CellState::Single(_), StateLayout::Single(_)) => true,
            (CellState::Double(..), StateLayout::Double(_)) => true,
            (CellState::Custom(parts), StateLayout::Custom(names)) => {
                parts.len() == names.len() && parts.iter().zip(names.iter()).all(|(p, n)| p.0 == *n)
            }
            _ => false,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&S) -> U) -> CellState<U> {
        match self {
            CellState::Single(h) => CellState::Single(f(h)),
            CellState::Double(h, c) => CellState::Double(f(h), f(c)),
            CellState::Custom(parts) => CellState::Custom(parts.iter().map(|(n, s)| (*n, f(s))).collect()),
        }
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(&S) -> Result<U, E>) -> Result<CellState<U>, E> {
        Ok(match self {
            CellState::Single(h) => CellState::Single(f(h)?),
            CellState::Double(h, c) => CellState::Double(f(h)?, f(c)?),
            CellState::Custom(parts) => CellState::Custom(
                parts
                    .iter()
                    .map(|(n, s)| Ok((*n, f(s)?)))
                    .collect::<Result<_, E>>()?,
            ),
        })
    }

    /// Combines two states of the same layout part by part.
    pub fn zip_with<U, V>(
        &self,
        other: &CellState<U>,
        mut f: impl FnMut(&S, &U) -> Result<V>,
    ) -> Result<CellState<V>> {
        Ok(match (self, other) {
            (CellState::Single(a), CellState::Single(b)) => CellState::Single(f(a, b)?),
            (CellState::Double(a, c), CellState::Double(b, d)) => CellState::Double(f(a, b)?, f(c, d)?),
            (CellState::Custom(xs), CellState::Custom(ys)) if xs.len() == ys.len() => CellState::Custom(
                xs.iter()
                    .zip(ys)
                    .map(|((n, a), (_, b))| Ok((*n, f(a, b)?)))
                    .collect::<Result<_>>()?,
            ),
            _ => return Err(Error::contract("state layouts differ")),
        })
    }
}
