//! `supck` — compare protein binding pockets and ligands as labeled 3D atom
//! clouds, and evaluate the measures for ligand prediction.
//!
//! Exit codes: 0 success, 1 input error, 2 computation error.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Error carrying the process exit code.
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub fn input_error(message: impl Into<String>) -> CliError {
    CliError {
        code: 1,
        message: message.into(),
    }
}

pub fn compute_error(message: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: message.into(),
    }
}

impl From<supck::Error> for CliError {
    fn from(err: supck::Error) -> Self {
        let code = match &err {
            supck::Error::Eval(_) => 2,
            _ => 1,
        };
        CliError {
            code,
            message: err.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        // Ignore the error if a pool already exists (tests in-process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    let result = match &cli.command {
        Command::Extract(args) => commands::run_extract(args),
        Command::Compare(args) => commands::run_compare(args),
        Command::Matrix(args) => commands::run_matrix(args),
        Command::Auc(args) => commands::run_auc(args),
        Command::Classify(args) => commands::run_classify(args),
        Command::Kpca(args) => commands::run_kpca(args),
        Command::Sweep(args) => commands::run_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
