//! Full-sequence BPTT training of a stacked recurrent model with a linear head.
//!
//! A run is determined by its [`TrainConfig`]. The root seed is split into
//! four independent streams: parameter init, training batches, the fixed
//! validation set and dropout masks.

use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::cells::{Mode, ParamSpec};
use crate::error::{Error, Result};
use crate::init::{initialize_with_fan, InitSpec};
use crate::layers::{LayerSpec, SequenceBatch, StackedRnn};
use crate::optim::{clip_grad_norm, OptimizerKind, OptimizerState};
use crate::rng::Rng;
use crate::tasks::{task_metric, TaskBatch, TaskKind};
use crate::tensor::{Real, Tensor};

pub const STREAM_INIT: u64 = 0;
pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_VAL: u64 = 2;
pub const STREAM_DROPOUT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    /// `layer.cell.input_size` must equal the task's input size.
    pub layer: LayerSpec,
    pub optimizer: OptimizerKind,
    pub clip_norm: Option<f64>,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub val_batches: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.layer.validate()?;
        self.optimizer.validate()?;
        if self.layer.cell.input_size != self.task.input_size() {
            return Err(Error::contract(format!(
                "cell input size {} does not match the {} task's {}",
                self.layer.cell.input_size,
                self.task.name(),
                self.task.input_size()
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::contract(format!("clip norm must be positive, got {c}")));
            }
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batches_per_epoch", self.batches_per_epoch),
            ("batch_size", self.batch_size),
            ("val_batches", self.val_batches),
        ] {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be ≥ 1")));
            }
        }
        Ok(())
    }
}

/// Stacked recurrent layers followed by a linear read-out.
///
/// Adding reads out the last step only (`[B, 1]`); copy reads out every step
/// (`[T·B, 10]`, time-major rows).
pub struct SequenceModel<T: Real = f64> {
    task: TaskKind,
    stack: StackedRnn<T>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
}

impl<T: Real> std::fmt::Debug for SequenceModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SequenceModel")
            .field("task", &self.task)
            .field("stack", &self.stack)
            .finish()
    }
}

impl<T: Real> SequenceModel<T> {
    pub fn new(layer: &LayerSpec, task: TaskKind, rng: &mut Rng) -> Result<Self> {
        let stack = StackedRnn::new(layer, rng)?;
        let (out, hidden) = (task.output_size(), stack.output_size());
        let head_w = initialize_with_fan(InitSpec::UniformFan, &[out, hidden], Some(hidden), rng)?;
        let head_b = initialize_with_fan(InitSpec::UniformFan, &[out], Some(hidden), rng)?;
        Ok(SequenceModel {
            task,
            stack,
            head_w,
            head_b,
        })
    }

    pub fn stack(&self) -> &StackedRnn<T> {
        &self.stack
    }

    /// Stack manifest followed by `head.W` and `head.b`.
    pub fn manifest(&self) -> Vec<ParamSpec> {
        let mut m = self.stack.manifest();
        m.push(ParamSpec {
            name: "head.W".into(),
            shape: self.head_w.shape().to_vec(),
            init: InitSpec::UniformFan,
        });
        m.push(ParamSpec {
            name: "head.b".into(),
            shape: self.head_b.shape().to_vec(),
            init: InitSpec::UniformFan,
        });
        m
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut p = self.stack.parameters();
        p.push(&self.head_w);
        p.push(&self.head_b);
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.stack.parameters_mut();
        p.push(&mut self.head_w);
        p.push(&mut self.head_b);
        p
    }

    /// Replaces every parameter; `values` follow manifest order and shapes.
    pub fn load_parameters(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        let manifest = self.manifest();
        if values.len() != manifest.len() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                manifest.len(),
                values.len()
            )));
        }
        for (spec, v) in manifest.iter().zip(&values) {
            if v.shape() != spec.shape {
                return Err(Error::dim(format!("parameter {}", spec.name), &spec.shape, v.shape()));
            }
        }
        for (slot, v) in self.parameters_mut().into_iter().zip(values) {
            *slot = v;
        }
        Ok(())
    }

    /// Forward pass over `[T, B, F]` inputs. Returns the read-out node and
    /// every parameter leaf in manifest order.
    pub fn forward(&self, tape: &Tape<T>, inputs: &Tensor<T>, mode: &mut Mode<'_>) -> Result<(Var, Vec<Var>)> {
        let batch = SequenceBatch::new(inputs.clone(), None)?;
        let xs = batch.to_vars(tape)?;
        let bound = self.stack.bind(tape)?;
        let (outs, _) = self.stack.forward(tape, &bound, &xs, None, None, mode)?;
        let w = tape.param(self.head_w.clone())?;
        let b = tape.param(self.head_b.clone())?;
        let features = if self.task.predicts_every_step() {
            tape.concat_rows(&outs)?
        } else {
            outs[outs.len() - 1]
        };
        let out = tape.linear(features, w, Some(b))?;
        let mut leaves: Vec<Var> = bound.into_iter().flatten().flat_map(|b| b.leaves).collect();
        leaves.push(w);
        leaves.push(b);
        Ok((out, leaves))
    }

    /// Mean loss and mean task metric over `batches`, in evaluation mode.
    pub fn evaluate(&self, batches: &[TaskBatch<T>]) -> Result<(f64, f64)> {
        let (mut loss, mut metric) = (0.0, 0.0);
        for b in batches {
            let tape = Tape::new();
            let (out, _) = self.forward(&tape, &b.inputs, &mut Mode::Eval)?;
            let l = self.task.loss(&tape, out, &b.targets)?;
            loss += tape.value(l)?.data()[0].to_f64().unwrap_or(f64::NAN);
            metric += task_metric(&self.task, &tape.value(out)?, &b.targets)?;
        }
        let n = batches.len().max(1) as f64;
        Ok((loss / n, metric / n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub metric: f64,
    pub seconds: f64,
}

/// The fixed validation set of a run: `val_batches` batches from the
/// validation stream.
pub fn validation_set<T: Real>(config: &TrainConfig) -> Result<Vec<TaskBatch<T>>> {
    let mut rng = Rng::new(config.seed).split(STREAM_VAL);
    (0..config.val_batches)
        .map(|_| config.task.generate(config.batch_size, &mut rng))
        .collect()
}

/// Lower is better for adding (MSE), higher for copy (accuracy).
pub fn metric_improves(task: &TaskKind, candidate: f64, best: f64) -> bool {
    match task {
        TaskKind::Adding { .. } => candidate < best,
        TaskKind::Copy { .. } => candidate > best,
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub metric: f64,
    pub grad_norm: f64,
}

pub struct Trainer<T: Real = f64> {
    config: TrainConfig,
    model: SequenceModel<T>,
    optimizer: OptimizerState<T>,
    train_rng: Rng,
    dropout_rng: Rng,
    val_set: Vec<TaskBatch<T>>,
    epoch: usize,
    history: Vec<EpochMetrics>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let model = SequenceModel::new(&config.layer, config.task, &mut root.split(STREAM_INIT))?;
        let shapes: Vec<Vec<usize>> = model.parameters().iter().map(|p| p.shape().to_vec()).collect();
        let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        let optimizer = OptimizerState::new(config.optimizer, &shape_refs)?;
        Ok(Trainer {
            config,
            model,
            optimizer,
            train_rng: root.split(STREAM_TRAIN),
            dropout_rng: root.split(STREAM_DROPOUT),
            val_set: validation_set(&config)?,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &SequenceModel<T> {
        &self.model
    }

    pub fn optimizer(&self) -> &OptimizerState<T> {
        &self.optimizer
    }

    /// Replaces parameters and optimizer state, e.g. from a checkpoint.
    /// Data streams and the epoch counter are left as they are.
    pub fn load_state(&mut self, params: Vec<Tensor<T>>, optimizer: OptimizerState<T>) -> Result<()> {
        if optimizer.kind() != self.config.optimizer {
            return Err(Error::contract(format!(
                "optimizer {:?} does not match the configured {:?}",
                optimizer.kind(),
                self.config.optimizer
            )));
        }
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        let optimizer = OptimizerState::restore(
            optimizer.kind(),
            &shapes,
            optimizer.step_count(),
            optimizer.slots().map(|(_, s)| s.to_vec()).collect(),
        )?;
        self.model.load_parameters(params)?;
        self.optimizer = optimizer;
        Ok(())
    }

    /// Mean loss and metric of the current parameters on the fixed
    /// validation set.
    pub fn evaluate_validation(&self) -> Result<(f64, f64)> {
        self.model.evaluate(&self.val_set)
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Forward, backward, clip and update on one batch. Non-finite values are
    /// reported as [`Error::NonFinite`] or [`Error::Contract`] from the tape;
    /// [`Trainer::run_epoch`] attaches epoch and batch.
    pub fn train_step(&mut self, batch: &TaskBatch<T>) -> Result<StepReport> {
        let tape = Tape::new();
        let (out, leaves) = self.model.forward(&tape, &batch.inputs, &mut Mode::Train(&mut self.dropout_rng))?;
        let loss_node = self.config.task.loss(&tape, out, &batch.targets)?;
        let loss = tape.value(loss_node)?.data()[0].to_f64().unwrap_or(f64::NAN);
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "loss" });
        }
        let metric = task_metric(&self.config.task, &tape.value(out)?, &batch.targets)?;
        tape.backward(loss_node)?;
        let mut grads = leaves.iter().map(|&l| tape.grad(l)).collect::<Result<Vec<_>>>()?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "gradient" });
        }
        let grad_norm = match self.config.clip_norm {
            Some(c) => clip_grad_norm(&mut grads, c)?,
            None => crate::optim::global_norm(&grads),
        };
        self.optimizer.step(&mut self.model.parameters_mut(), &grads)?;
        Ok(StepReport { loss, metric, grad_norm })
    }

    /// Trains one epoch, then evaluates on the validation set.
    pub fn run_epoch(&mut self) -> Result<[EpochMetrics; 2]> {
        if self.is_finished() {
            return Err(Error::contract("all configured epochs already ran"));
        }
        let epoch = self.epoch + 1;
        let start = Instant::now();
        let (mut loss, mut metric) = (0.0, 0.0);
        for b in 0..self.config.batches_per_epoch {
            let batch = self.config.task.generate(self.config.batch_size, &mut self.train_rng)?;
            let report = self.train_step(&batch).map_err(|e| match e {
                Error::NonFinite { op } => Error::Diverged {
                    epoch,
                    batch: b + 1,
                    detail: format!("non-finite value in {op}"),
                },
                other => other,
            })?;
            loss += report.loss;
            metric += report.metric;
        }
        let n = self.config.batches_per_epoch as f64;
        let train = EpochMetrics {
            epoch,
            split: Split::Train,
            loss: loss / n,
            metric: metric / n,
            seconds: start.elapsed().as_secs_f64(),
        };
        let val_start = Instant::now();
        let diverged = || Error::Diverged {
            epoch,
            batch: self.config.batches_per_epoch,
            detail: "non-finite validation loss".into(),
        };
        let (val_loss, val_metric) = self.model.evaluate(&self.val_set).map_err(|e| match e {
            Error::NonFinite { .. } => diverged(),
            other => other,
        })?;
        if !val_loss.is_finite() || !val_metric.is_finite() {
            return Err(diverged());
        }
        let val = EpochMetrics {
            epoch,
            split: Split::Val,
            loss: val_loss,
            metric: val_metric,
            seconds: val_start.elapsed().as_secs_f64(),
        };
        self.epoch = epoch;
        self.history.extend([train, val]);
        Ok([train, val])
    }

    /// Runs every remaining epoch and returns the full history.
    pub fn run(&mut self) -> Result<&[EpochMetrics]> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(&self.history)
    }
}
