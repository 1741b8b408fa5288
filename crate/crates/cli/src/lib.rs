//! `slm` command-line driver.
//!
//! Exit codes: 0 success, 2 invalid config, 3 data or IO failure, 4 numeric
//! failure during training, 5 unreadable checkpoint, 1 anything else.

mod commands;
mod inspect;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use slm_core::SlmError;

pub use commands::{cmd_eval, cmd_gen_data, cmd_init_config, cmd_train, EvalReport, TrainSummary};
pub use inspect::{cmd_inspect, Inspect};

#[derive(Debug, Parser)]
#[command(name = "slm", version, about = "Continual learning with retrieved low-rank increments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Key-value retrieval with combined increments.
    Slm,
    /// One shared increment set fine-tuned task after task.
    Finetune,
    /// Independent per-task blocks (upper reference).
    Separate,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the default run configuration.
    InitConfig {
        path: PathBuf,
    },
    /// Generate the synthetic task suite described by a config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train over the task order and write a checkpoint directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "slm")]
        mode: Mode,
    },
    /// Re-evaluate a checkpoint on the suite's test sets.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Restrict retrieval to each example's own task.
        #[arg(long)]
        task_id: bool,
        /// Recompute every row of the accuracy matrix, not just the last.
        #[arg(long)]
        matrix: bool,
    },
    /// Export keys, key similarities or retrieval accuracy as CSV.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        what: Inspect,
        /// Suite directory; required for `retrieval`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; defaults to the checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn exit_code(e: &SlmError) -> u8 {
    match e {
        SlmError::Config { .. } => 2,
        SlmError::Io { .. } | SlmError::Parse { .. } | SlmError::Schema { .. } | SlmError::Json(_) => 3,
        SlmError::Numeric { .. } => 4,
        SlmError::Checkpoint(_) => 5,
        _ => 1,
    }
}

pub fn run(cli: &Cli) -> Result<(), SlmError> {
    match &cli.command {
        Command::InitConfig { path } => {
            cmd_init_config(path)?;
            println!("wrote {}", path.display());
        }
        Command::GenData { config, out } => {
            let manifest = cmd_gen_data(config, out)?;
            println!("{}", manifest.display());
        }
        Command::Train { config, data, out, mode } => {
            let summary = cmd_train(config, data, out, *mode)?;
            println!("final average accuracy: {:.2}", summary.average_accuracy);
            match summary.forgetting {
                Some(f) => println!("final forgetting: {f:.2}"),
                None => println!("final forgetting: n/a"),
            }
            println!("checkpoint: {}", out.display());
        }
        Command::Eval {
            checkpoint,
            data,
            task_id,
            matrix,
        } => {
            let report = cmd_eval(checkpoint, data, *task_id, *matrix)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Inspect {
            checkpoint,
            what,
            data,
            out,
        } => {
            for path in cmd_inspect(checkpoint, *what, data.as_deref(), out.as_deref())? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
