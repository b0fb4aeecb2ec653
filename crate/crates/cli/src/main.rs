//! `hvp`: generate synthetic features, train, evaluate, ablate and export
//! scores. Exit codes: 0 success, 1 usage, 2 data or validation, 3 numeric.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {source}")]
    Context { context: String, source: hvp_core::Error },
    #[error(transparent)]
    Core(#[from] hvp_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        let core = match self {
            Self::Usage(_) => return 1,
            Self::Io { .. } | Self::Invalid(_) => return 2,
            Self::Context { source, .. } | Self::Core(source) => source,
        };
        match core {
            hvp_core::Error::Config(_) => 1,
            e if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

/// Attaches a path to core errors raised while reading it.
pub trait WithPath<T> {
    fn at(self, path: &Path) -> Result<T, CliError>;
}

impl<T> WithPath<T> for hvp_core::Result<T> {
    fn at(self, path: &Path) -> Result<T, CliError> {
        self.map_err(|source| CliError::Context {
            context: path.display().to_string(),
            source,
        })
    }
}

#[derive(Parser)]
#[command(name = "hvp", version, about = "Hierarchical video-text retrieval head")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/val/test datasets and a manifest.
    GenData(commands::GenDataArgs),
    /// Train on <data>/train.hvpf, validating on <data>/val.hvpf.
    Train(commands::TrainArgs),
    /// Retrieval metrics of a checkpoint on one dataset.
    Eval(commands::EvalArgs),
    /// Train and compare ablation variants.
    Ablate(commands::AblateArgs),
    /// Write the total and per-component score matrices.
    ExportScores(commands::ExportArgs),
    /// Print a dataset header and its validation report.
    Inspect(commands::InspectArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::ExportScores(a) => commands::export_scores(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
