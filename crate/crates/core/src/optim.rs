//! First-order optimizers and global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// `v ← μv + g`, `θ ← θ - lr·v`.
    Sgd { lr: f64, momentum: f64 },
    /// Bias-corrected Adam.
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerKind::Sgd { lr, momentum }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { lr, .. } | OptimizerKind::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerKind::Sgd { lr, momentum } => lr >= 0.0 && (0.0..1.0).contains(&momentum),
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                lr >= 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid optimizer settings {self:?}")))
        }
    }

    fn slot_names(&self) -> &'static [&'static str] {
        match self {
            OptimizerKind::Sgd { .. } => &["momentum"],
            OptimizerKind::Adam { .. } => &["m", "v"],
        }
    }
}

/// Optimizer hyperparameters, per-parameter slots and the step counter.
///
/// `slots[k][i]` is slot kind `k` of parameter `i` and has its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Real = f64> {
    kind: OptimizerKind,
    slots: Vec<Vec<Tensor<T>>>,
    t: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, shapes: &[&[usize]]) -> Result<Self> {
        kind.validate()?;
        let slots = kind
            .slot_names()
            .iter()
            .map(|_| shapes.iter().map(|s| Tensor::zeros(s)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(OptimizerState { kind, slots, t: 0 })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// `(slot name, tensors)` pairs in a fixed order.
    pub fn slots(&self) -> impl Iterator<Item = (&'static str, &[Tensor<T>])> {
        self.kind
            .slot_names()
            .iter()
            .copied()
            .zip(self.slots.iter().map(|s| s.as_slice()))
    }

    /// Rebuilds a state from saved slots; shapes must match `shapes`.
    pub fn restore(
        kind: OptimizerKind,
        shapes: &[&[usize]],
        t: u64,
        slots: Vec<Vec<Tensor<T>>>,
    ) -> Result<Self> {
        kind.validate()?;
        if slots.len() != kind.slot_names().len() {
            return Err(Error::contract(format!(
                "{} expects {} slot kinds, got {}",
                kind.name(),
                kind.slot_names().len(),
                slots.len()
            )));
        }
        for (name, slot) in kind.slot_names().iter().zip(&slots) {
            if slot.len() != shapes.len() {
                return Err(Error::contract(format!(
                    "slot {name}: {} tensors for {} parameters",
                    slot.len(),
                    shapes.len()
                )));
            }
            for (i, (t, s)) in slot.iter().zip(shapes).enumerate() {
                if t.shape() != *s {
                    return Err(Error::dim(format!("slot {name}[{i}]"), s, t.shape()));
                }
            }
        }
        Ok(OptimizerState { kind, slots, t })
    }

    /// Applies one update to every parameter and increments the step counter.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.slots[0].len() {
            return Err(Error::contract(format!(
                "optimizer step: {} params, {} grads, {} slots",
                params.len(),
                grads.len(),
                self.slots[0].len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim(format!("optimizer step param {i}"), p.shape(), g.shape()));
            }
        }
        self.t += 1;
        let c = T::from_f64_lossy;
        match self.kind {
            OptimizerKind::Sgd { lr, momentum } => {
                let (lr, mu) = (c(lr), c(momentum));
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.slots[0]) {
                    for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vv = mu * *vv + gv;
                        *pv = *pv - lr * *vv;
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let t = self.t as i32;
                let bc1 = c(1.0 - beta1.powi(t));
                let bc2 = c(1.0 - beta2.powi(t));
                let (lr, b1, b2, eps) = (c(lr), c(beta1), c(beta2), c(eps));
                let one = T::one();
                let (ms, vs) = self.slots.split_at_mut(1);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut ms[0]).zip(&mut vs[0]) {
                    let it = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut());
                    for (((pv, &gv), mv), vv) in it {
                        *mv = b1 * *mv + (one - b1) * gv;
                        *vv = b2 * *vv + (one - b2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| {
            let v = v.to_f64().unwrap_or(f64::NAN);
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Scales every gradient by `max_norm / n` when the global norm `n` exceeds
/// `max_norm`; returns `n`. Gradients are untouched otherwise.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::contract(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let factor = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale_in_place(factor);
        }
    }
    Ok(norm)
}
