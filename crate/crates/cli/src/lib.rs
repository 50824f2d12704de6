//! Command-line drivers for the quadratic toy studies, facility-location
//! training and gradient checks.
//!
//! Exit codes: 0 on success (runs that stop early on a non-finite loss
//! count as success and only print a warning), 1 on runtime failure and
//! 2 on usage errors.

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use config::{Cli, Command};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<uco_core::Error> for CliError {
    fn from(e: uco_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::ToyMisalign(f) => commands::toy_misalign(&config::ToyMisalignConfig::resolve(f)?),
        Command::ToySoft(f) => commands::toy_soft(&config::ToySoftConfig::resolve(f)?),
        Command::TrainFl(f) => commands::train_fl(&config::TrainFlConfig::resolve(f)?),
        Command::GradCheck(f) => commands::grad_check(&config::GradCheckConfig::resolve(f)?),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
