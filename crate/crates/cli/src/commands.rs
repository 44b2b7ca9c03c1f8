use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use recurrent::cells::{CellKind, CellSpec};
use recurrent::gradcheck::{scan_grad_check, ScanSizes};
use recurrent::tasks::TaskKind;
use recurrent::train::{metric_improves, EpochMetrics, Trainer};
use recurrent::{Error, Real};
use serde_json::json;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, Precision, RawConfig, RunConfig};
use crate::RunArgs;

/// Tolerance on the maximum relative error of `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => crate::EXIT_CONFIG,
            CliError::Numeric(_) => crate::EXIT_NUMERIC,
            CliError::Checkpoint(CheckpointError::Manifest { .. }) => crate::EXIT_MANIFEST,
            CliError::Checkpoint(_) => crate::EXIT_CORRUPT,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn library_error(e: Error) -> CliError {
    match e {
        Error::Diverged { .. } | Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
        other => CliError::Config(ConfigError::Invalid(other.to_string())),
    }
}

/// Defaults, then the config file, then `--set` in order, then `--seed` and `--out`.
pub fn resolve_run(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut raw = match &args.config {
        Some(path) => RawConfig::read(path)?,
        None => RawConfig::default(),
    };
    for assignment in &args.set {
        raw.set_override(assignment)?;
    }
    if let Some(seed) = args.seed {
        raw.set("seed", json!(seed))?;
    }
    if let Some(dir) = &args.out {
        raw.set("out_dir", json!(dir.to_string_lossy()))?;
    }
    Ok(raw.resolve()?)
}

pub fn list_cells(out: &mut dyn Write) -> Result<(), CliError> {
    let rows: Vec<[String; 6]> = CellKind::all()
        .into_iter()
        .map(|kind| {
            let spec = CellSpec::new(kind, 128, 128).expect("registry defaults are valid");
            let layout = kind.state_layout();
            let hyper = kind
                .hyperparams()
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>();
            [
                kind.name().to_string(),
                kind.family().name().to_string(),
                format!("{} ({})", layout.arity_name(), layout.names().join(", ")),
                if hyper.is_empty() { "-".into() } else { hyper.join(" ") },
                spec.parameter_count_formula(),
                spec.parameter_count().to_string(),
            ]
        })
        .collect();
    let header = ["name", "family", "state", "hyperparameters", "parameters", "at I=H=128"];
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[&str]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            s.push_str(c);
            if i + 1 < cells.len() {
                s.push_str(&" ".repeat(w - c.chars().count() + 2));
            }
        }
        s
    };
    writeln!(out, "{}", line(&header))?;
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        writeln!(out, "{}", line(&cells))?;
    }
    Ok(())
}

pub fn train(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = resolve_run(args)?;
    match config.precision {
        Precision::F64 => train_as::<f64>(&config, out),
        Precision::F32 => train_as::<f32>(&config, out),
    }
}

fn metric_name(task: &TaskKind) -> &'static str {
    match task {
        TaskKind::Adding { .. } => "mse",
        TaskKind::Copy { .. } => "accuracy",
    }
}

fn write_rows(
    config: &RunConfig,
    rows: &[EpochMetrics],
    csv: &mut impl Write,
    jsonl: &mut impl Write,
) -> Result<(), CliError> {
    for m in rows {
        let seconds = if config.csv_wall_time {
            m.seconds.to_string()
        } else {
            "0".to_string()
        };
        writeln!(csv, "{},{},{},{},{}", m.epoch, m.split.name(), m.loss, m.metric, seconds)?;
        let record = json!({
            "epoch": m.epoch,
            "split": m.split.name(),
            "loss": m.loss,
            "metric": m.metric,
            "seconds": m.seconds,
        });
        writeln!(jsonl, "{record}")?;
    }
    csv.flush()?;
    jsonl.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn train_as<T: Real>(config: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    std::fs::write(dir.join("resolved-config.json"), config.to_json_string())?;
    let mut trainer = Trainer::<T>::new(config.train).map_err(library_error)?;
    let mut csv = create(&dir.join("metrics.csv"))?;
    let mut jsonl = create(&dir.join("metrics.jsonl"))?;
    writeln!(csv, "epoch,split,loss,metric,seconds")?;

    let task = config.train.task;
    let mut best: Option<f64> = None;
    while !trainer.is_finished() {
        let rows = trainer.run_epoch().map_err(library_error)?;
        write_rows(config, &rows, &mut csv, &mut jsonl)?;
        let [train, val] = rows;
        writeln!(
            out,
            "epoch {}/{}  train loss {:.6}  val loss {:.6}  val {} {:.6}",
            val.epoch,
            config.train.epochs,
            train.loss,
            val.loss,
            metric_name(&task),
            val.metric
        )?;
        if best.is_none_or(|b| metric_improves(&task, val.metric, b)) {
            best = Some(val.metric);
            Checkpoint::capture(&trainer).save(&dir.join("best.ckpt"))?;
        }
    }
    Checkpoint::capture(&trainer).save(&dir.join("final.ckpt"))?;
    Ok(())
}

pub fn eval(checkpoint: &Path, args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = resolve_run(args)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let (loss, metric) = match config.precision {
        Precision::F64 => eval_as::<f64>(&config, &ckpt)?,
        Precision::F32 => eval_as::<f32>(&config, &ckpt)?,
    };
    let report = json!({
        "checkpoint": checkpoint.to_string_lossy(),
        "split": "val",
        "loss": loss,
        "metric": metric,
        "metric_name": metric_name(&config.train.task),
    });
    writeln!(out, "{report}")?;
    Ok(())
}

fn eval_as<T: Real>(config: &RunConfig, ckpt: &Checkpoint) -> Result<(f64, f64), CliError> {
    let mut trainer = Trainer::<T>::new(config.train).map_err(library_error)?;
    ckpt.restore(&mut trainer)?;
    trainer.evaluate_validation().map_err(library_error)
}

pub fn gradcheck(cell: &str, sizes: ScanSizes, eps: f64, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let kinds = if cell == "all" {
        CellKind::all()
    } else {
        vec![CellKind::from_name(cell).map_err(|e| ConfigError::Invalid(e.to_string()))?]
    };
    let mut failed = Vec::new();
    for kind in &kinds {
        let report = scan_grad_check(*kind, sizes, eps, seed).map_err(|e| match e {
            Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Config(ConfigError::Invalid(other.to_string())),
        })?;
        let pass = report.passes(GRADCHECK_TOLERANCE);
        if !pass {
            failed.push(kind.name());
        }
        writeln!(
            out,
            "{:<14} max_rel_error {:.3e}  checked {:>4}  skipped {:>2}  {}",
            kind.name(),
            report.max_rel_error,
            report.checked,
            report.skipped,
            if pass { "ok" } else { "FAIL" }
        )?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check above {GRADCHECK_TOLERANCE:e} for {}",
            failed.join(", ")
        )))
    }
}
