//! Command-line front end: JSON configuration in, JSON reports and CSV
//! tables out.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::Path;

pub use commands::{CommandOutput, RangeArgs};
pub use config::{load_system, parse_system, System};
pub use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Analyze,
    Sweep,
    Pierce,
    Reduce,
    Simulate,
    Propagate,
}

pub fn run(cmd: Command, sys: &System, range: &RangeArgs) -> Result<CommandOutput, CliError> {
    match cmd {
        Command::Analyze => commands::analyze(sys),
        Command::Sweep => commands::sweep(sys, range),
        Command::Pierce => commands::pierce(sys, range),
        Command::Reduce => commands::reduce(sys),
        Command::Simulate => commands::simulate_cmd(sys),
        Command::Propagate => commands::propagate(sys),
    }
}

pub fn write_files(dir: &Path, out: &CommandOutput) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    for (name, text) in &out.files {
        std::fs::write(dir.join(name), text).map_err(io)?;
    }
    Ok(())
}
