//! Flat JSON run configuration.
//!
//! Precedence, lowest to highest: built-in defaults, the config file,
//! `--set key=value` overrides in command-line order, then `--seed` / `--out`.
//! Keys that are unknown, or that do not apply to the selected cell, task or
//! optimizer, are rejected.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `cell` | `"lstm"` | registry name |
//! | `hidden_size` | 64 | H |
//! | `activation`, `dt`, `gamma`, `epsilon`, `dt_max`, `eps_step` | per cell | cell hyperparameters |
//! | `direction` | `"forward"` | or `"bidirectional"` |
//! | `layers` | 1 | stack depth |
//! | `dropout` | 0 | between stacked layers |
//! | `residual` | false | residual connection around each layer |
//! | `task` | `"adding"` | or `"copy"` |
//! | `T` | 100 / 50 | adding length / copy blank length |
//! | `K` | 10 | copy symbols (copy only) |
//! | `optimizer` | `"adam"` | or `"sgd"` |
//! | `lr` | 0.003 | learning rate |
//! | `momentum` | 0 | sgd only |
//! | `beta1`, `beta2`, `eps` | 0.9, 0.999, 1e-8 | adam only |
//! | `clip_norm` | 1 | global-norm clip; `null` disables |
//! | `epochs`, `batches_per_epoch`, `batch_size`, `val_batches` | 30, 100, 32, 10 | schedule |
//! | `seed` | 0 | root seed |
//! | `precision` | `"f64"` | or `"f32"` |
//! | `out_dir` | `"out"` | artifact directory |
//! | `csv_wall_time` | false | write measured seconds into metrics.csv |

use std::path::PathBuf;

use recurrent::cells::{Activation, CellKind, CellSpec, HyperValue};
use recurrent::layers::{Direction, LayerSpec};
use recurrent::optim::OptimizerKind;
use recurrent::tasks::TaskKind;
use recurrent::train::TrainConfig;
use serde_json::{json, Map, Value};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("config syntax error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("config key `{key}`: {msg}")]
    Key { key: String, msg: String },
    #[error("config: {0}")]
    Invalid(String),
}

fn key_err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.into(),
        msg: msg.into(),
    }
}

const CELL_KEYS: [&str; 6] = ["activation", "dt", "gamma", "epsilon", "dt_max", "eps_step"];
const ADAM_KEYS: [&str; 3] = ["beta1", "beta2", "eps"];

const GENERAL_KEYS: [&str; 21] = [
    "cell",
    "hidden_size",
    "direction",
    "layers",
    "dropout",
    "residual",
    "task",
    "T",
    "K",
    "optimizer",
    "lr",
    "momentum",
    "clip_norm",
    "epochs",
    "batches_per_epoch",
    "batch_size",
    "val_batches",
    "seed",
    "precision",
    "out_dir",
    "csv_wall_time",
];

fn is_known(key: &str) -> bool {
    GENERAL_KEYS.contains(&key) || CELL_KEYS.contains(&key) || ADAM_KEYS.contains(&key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// A fully resolved, validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub precision: Precision,
    pub out_dir: PathBuf,
    pub csv_wall_time: bool,
}

/// Raw key/value layer: file contents plus overrides, before resolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: Map<String, Value>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        match value {
            Value::Object(entries) => {
                if let Some(k) = entries.keys().find(|k| !is_known(k)) {
                    return Err(key_err(k, "unknown key"));
                }
                Ok(RawConfig { entries })
            }
            _ => Err(ConfigError::Invalid("top level must be a JSON object".into())),
        }
    }

    pub fn read(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        RawConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<(), ConfigError> {
        if !is_known(key) {
            return Err(key_err(key, "unknown key"));
        }
        self.entries.insert(key.to_string(), value);
        Ok(())
    }

    /// `key=value`; the value is read as JSON when it parses, else as a string.
    pub fn set_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("override `{assignment}` is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set(key.trim(), value)
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.entries.remove(key)
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String, ConfigError> {
        match self.take(key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s),
            Some(v) => Err(key_err(key, format!("expected a string, got {v}"))),
        }
    }

    fn number(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Number(n)) => Ok(n.as_f64().unwrap()),
            Some(v) => Err(key_err(key, format!("expected a number, got {v}"))),
        }
    }

    fn count(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Number(n)) => n
                .as_u64()
                .ok_or_else(|| key_err(key, format!("expected a non-negative integer, got {n}"))),
            Some(v) => Err(key_err(key, format!("expected a non-negative integer, got {v}"))),
        }
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(b),
            Some(v) => Err(key_err(key, format!("expected true or false, got {v}"))),
        }
    }

    /// Applies defaults and validates every field.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut raw = self.clone();
        let usize_of = |raw: &mut RawConfig, key: &str, default: u64| -> Result<usize, ConfigError> {
            raw.count(key, default).map(|v| v as usize)
        };

        let cell_name = raw.string("cell", "lstm")?;
        let mut kind = CellKind::from_name(&cell_name).map_err(|e| key_err("cell", e.to_string()))?;
        let applicable: Vec<&str> = kind.hyperparams().iter().map(|(k, _)| *k).collect();
        for key in CELL_KEYS {
            let Some(value) = raw.take(key) else { continue };
            if !applicable.contains(&key) {
                return Err(key_err(key, format!("does not apply to cell `{cell_name}`")));
            }
            let hv = match (&value, key) {
                (Value::String(s), "activation") => {
                    HyperValue::Act(Activation::parse(s).map_err(|e| key_err(key, e.to_string()))?)
                }
                (Value::Number(n), _) if key != "activation" => HyperValue::Num(n.as_f64().unwrap()),
                _ => return Err(key_err(key, format!("invalid value {value}"))),
            };
            kind.set_hyperparam(key, hv).map_err(|e| key_err(key, e.to_string()))?;
        }
        let hidden = usize_of(&mut raw, "hidden_size", 64)?;

        let task_name = raw.string("task", "adding")?;
        let task = match task_name.as_str() {
            "adding" => {
                if raw.take("K").is_some() {
                    return Err(key_err("K", "only applies to the copy task"));
                }
                TaskKind::Adding {
                    steps: usize_of(&mut raw, "T", 100)?,
                }
            }
            "copy" => TaskKind::Copy {
                blank: usize_of(&mut raw, "T", 50)?,
                k: usize_of(&mut raw, "K", 10)?,
            },
            other => return Err(key_err("task", format!("unknown task `{other}` (adding, copy)"))),
        };
        task.validate().map_err(|e| key_err("task", e.to_string()))?;

        let cell = CellSpec::new(kind, task.input_size(), hidden).map_err(|e| key_err("cell", e.to_string()))?;
        let direction = match raw.string("direction", "forward")?.as_str() {
            "forward" => Direction::Forward,
            "bidirectional" => Direction::Bidirectional,
            other => return Err(key_err("direction", format!("unknown direction `{other}`"))),
        };
        let layer = LayerSpec {
            cell,
            direction,
            layers: usize_of(&mut raw, "layers", 1)?,
            dropout: raw.number("dropout", 0.0)?,
            residual: raw.flag("residual", false)?,
        };
        layer.validate().map_err(|e| key_err("layers", e.to_string()))?;

        let lr = raw.number("lr", 3e-3)?;
        let optimizer = match raw.string("optimizer", "adam")?.as_str() {
            "adam" => {
                if raw.take("momentum").is_some() {
                    return Err(key_err("momentum", "only applies to sgd"));
                }
                OptimizerKind::Adam {
                    lr,
                    beta1: raw.number("beta1", 0.9)?,
                    beta2: raw.number("beta2", 0.999)?,
                    eps: raw.number("eps", 1e-8)?,
                }
            }
            "sgd" => {
                if let Some(k) = ADAM_KEYS.iter().find(|k| raw.entries.contains_key(**k)) {
                    return Err(key_err(k, "only applies to adam"));
                }
                OptimizerKind::Sgd {
                    lr,
                    momentum: raw.number("momentum", 0.0)?,
                }
            }
            other => return Err(key_err("optimizer", format!("unknown optimizer `{other}` (adam, sgd)"))),
        };
        optimizer.validate().map_err(|e| key_err("optimizer", e.to_string()))?;

        let clip_norm = match raw.take("clip_norm") {
            None => Some(1.0),
            Some(Value::Null) => None,
            Some(Value::Number(n)) => Some(n.as_f64().unwrap()),
            Some(v) => return Err(key_err("clip_norm", format!("expected a number or null, got {v}"))),
        };

        let train = TrainConfig {
            task,
            layer,
            optimizer,
            clip_norm,
            epochs: usize_of(&mut raw, "epochs", 30)?,
            batches_per_epoch: usize_of(&mut raw, "batches_per_epoch", 100)?,
            batch_size: usize_of(&mut raw, "batch_size", 32)?,
            val_batches: usize_of(&mut raw, "val_batches", 10)?,
            seed: raw.count("seed", 0)?,
        };
        train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let precision = match raw.string("precision", "f64")?.as_str() {
            "f64" => Precision::F64,
            "f32" => Precision::F32,
            other => return Err(key_err("precision", format!("unknown precision `{other}` (f32, f64)"))),
        };
        let out_dir = PathBuf::from(raw.string("out_dir", "out")?);
        let csv_wall_time = raw.flag("csv_wall_time", false)?;

        debug_assert!(raw.entries.is_empty(), "unconsumed keys {:?}", raw.entries.keys());
        if let Some(k) = raw.entries.keys().next() {
            return Err(key_err(k, "not consumed"));
        }
        Ok(RunConfig {
            train,
            precision,
            out_dir,
            csv_wall_time,
        })
    }
}

impl RunConfig {
    /// Every effective value, in the flat key set accepted by [`RawConfig`].
    pub fn to_raw(&self) -> RawConfig {
        let t = &self.train;
        let cell = &t.layer.cell;
        let mut m = Map::new();
        m.insert("cell".into(), json!(cell.kind.name()));
        m.insert("hidden_size".into(), json!(cell.hidden_size));
        for (k, v) in cell.kind.hyperparams() {
            let value = match v {
                HyperValue::Num(x) => json!(x),
                HyperValue::Act(a) => json!(a.name()),
            };
            m.insert(k.into(), value);
        }
        m.insert("direction".into(), json!(t.layer.direction.name()));
        m.insert("layers".into(), json!(t.layer.layers));
        m.insert("dropout".into(), json!(t.layer.dropout));
        m.insert("residual".into(), json!(t.layer.residual));
        match t.task {
            TaskKind::Adding { steps } => {
                m.insert("task".into(), json!("adding"));
                m.insert("T".into(), json!(steps));
            }
            TaskKind::Copy { blank, k } => {
                m.insert("task".into(), json!("copy"));
                m.insert("T".into(), json!(blank));
                m.insert("K".into(), json!(k));
            }
        }
        match t.optimizer {
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                m.insert("optimizer".into(), json!("adam"));
                m.insert("lr".into(), json!(lr));
                m.insert("beta1".into(), json!(beta1));
                m.insert("beta2".into(), json!(beta2));
                m.insert("eps".into(), json!(eps));
            }
            OptimizerKind::Sgd { lr, momentum } => {
                m.insert("optimizer".into(), json!("sgd"));
                m.insert("lr".into(), json!(lr));
                m.insert("momentum".into(), json!(momentum));
            }
        }
        m.insert("clip_norm".into(), t.clip_norm.map_or(Value::Null, |c| json!(c)));
        m.insert("epochs".into(), json!(t.epochs));
        m.insert("batches_per_epoch".into(), json!(t.batches_per_epoch));
        m.insert("batch_size".into(), json!(t.batch_size));
        m.insert("val_batches".into(), json!(t.val_batches));
        m.insert("seed".into(), json!(t.seed));
        m.insert("precision".into(), json!(self.precision.name()));
        m.insert("out_dir".into(), json!(self.out_dir.to_string_lossy()));
        m.insert("csv_wall_time".into(), json!(self.csv_wall_time));
        RawConfig { entries: m }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&Value::Object(self.to_raw().entries)).unwrap();
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_resolves_to_defaults() {
        let c = RawConfig::parse("{}").unwrap().resolve().unwrap();
        assert_eq!(c.train.task, TaskKind::Adding { steps: 100 });
        assert_eq!(c.train.layer.cell.kind, CellKind::Lstm);
        assert_eq!(c.train.layer.cell.hidden_size, 64);
        assert_eq!(c.train.clip_norm, Some(1.0));
        assert_eq!(c.train.optimizer, OptimizerKind::adam(3e-3));
        assert_eq!(c.precision, Precision::F64);
    }

    #[test]
    fn resolution_is_idempotent() {
        for text in [
            "{}",
            r#"{"cell": "cornn", "dt": 0.1, "task": "copy", "T": 5, "K": 3, "optimizer": "sgd", "momentum": 0.5}"#,
            r#"{"cell": "indrnn", "activation": "tanh", "clip_norm": null, "precision": "f32", "layers": 2, "dropout": 0.25}"#,
        ] {
            let once = RawConfig::parse(text).unwrap().resolve().unwrap();
            let twice = once.to_raw().resolve().unwrap();
            assert_eq!(once, twice);
            let reparsed = RawConfig::parse(&once.to_json_string()).unwrap().resolve().unwrap();
            assert_eq!(once, reparsed);
            assert_eq!(once.to_json_string(), twice.to_json_string());
        }
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let e = RawConfig::parse(r#"{"hiden_size": 3}"#).unwrap_err();
        assert_eq!(e, key_err("hiden_size", "unknown key"));
    }

    #[test]
    fn inapplicable_keys_are_rejected() {
        for (text, key) in [
            (r#"{"cell": "lstm", "dt": 0.1}"#, "dt"),
            (r#"{"task": "adding", "K": 3}"#, "K"),
            (r#"{"optimizer": "adam", "momentum": 0.9}"#, "momentum"),
            (r#"{"optimizer": "sgd", "beta1": 0.9}"#, "beta1"),
        ] {
            match RawConfig::parse(text).unwrap().resolve() {
                Err(ConfigError::Key { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        match RawConfig::parse("{\n  \"cell\": \"gru\",\n  oops\n}") {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_parse_json_or_fall_back_to_strings() {
        let mut raw = RawConfig::parse(r#"{"cell": "lstm"}"#).unwrap();
        raw.set_override("cell=gru").unwrap();
        raw.set_override("hidden_size=7").unwrap();
        raw.set_override("clip_norm=null").unwrap();
        let c = raw.resolve().unwrap();
        assert_eq!(c.train.layer.cell.kind, CellKind::Gru);
        assert_eq!(c.train.layer.cell.hidden_size, 7);
        assert_eq!(c.train.clip_norm, None);
        assert!(raw.set_override("nokey").is_err());
        assert!(raw.set_override("bogus=1").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            r#"{"hidden_size": 0}"#,
            r#"{"hidden_size": -1}"#,
            r#"{"lr": "fast"}"#,
            r#"{"dropout": 1.0, "layers": 2}"#,
            r#"{"task": "adding", "T": 1}"#,
            r#"{"clip_norm": 0}"#,
            r#"{"epochs": 0}"#,
            r#"{"cell": "nope"}"#,
            r#"[1, 2]"#,
        ] {
            assert!(RawConfig::parse(text).and_then(|r| r.resolve()).is_err(), "{text}");
        }
    }
}
