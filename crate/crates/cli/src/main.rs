//! `hazardcast`: ingest, train, evaluate, explain, aggregate and render.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod args;
mod commands;
mod config;
mod manifest;

use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(hazardcast::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Core(hazardcast::Error::File {
            path: path.to_path_buf(),
            source: e,
        })
    }

    fn exit_code(&self) -> u8 {
        use hazardcast::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Config(_)) => 1,
            CliError::Core(E::Numerical(_) | E::Shape { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl From<hazardcast::Error> for CliError {
    fn from(e: hazardcast::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn execute(command: &Command) -> Result<(), CliError> {
    let cfg = match command.common() {
        Some(c) => RunConfig::resolve(c.config.as_deref(), c.seed)?,
        None => RunConfig::default(),
    };
    commands::run(command, cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hazardcast {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
