//! Command-line driver: training runs, checkpoint evaluation, gradient checks
//! and the cell registry.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 numeric abort
//! (divergence, or a failed gradient check), 3 corrupt or unreadable
//! checkpoint, 4 checkpoint/model manifest mismatch.

pub mod checkpoint;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_CORRUPT: i32 = 3;
pub const EXIT_MANIFEST: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "recurrent", version, about = "Train, evaluate and verify recurrent cells")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by commands that build a run configuration.
#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Flat JSON config file; every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Root seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the cell registry.
    ListCells,
    /// Train a model and write metrics, checkpoints and the resolved config.
    Train(RunArgs),
    /// Evaluate a checkpoint on the configured validation set; prints JSON.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare scan gradients with central finite differences.
    Gradcheck {
        /// A registry name, or `all`.
        #[arg(default_value = "all")]
        cell: String,
        #[arg(long, default_value_t = recurrent::gradcheck::DEFAULT_EPS)]
        eps: f64,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 4)]
        input: usize,
        #[arg(long, default_value_t = 4)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let mut out = std::io::stdout().lock();
    let result = match cli.command {
        Command::ListCells => commands::list_cells(&mut out),
        Command::Train(run) => commands::train(&run, &mut out),
        Command::Eval { checkpoint, run } => commands::eval(&checkpoint, &run, &mut out),
        Command::Gradcheck {
            cell,
            eps,
            steps,
            batch,
            input,
            hidden,
            seed,
        } => {
            let sizes = recurrent::gradcheck::ScanSizes {
                steps,
                batch,
                input,
                hidden,
            };
            commands::gradcheck(&cell, sizes, eps, seed, &mut out)
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
