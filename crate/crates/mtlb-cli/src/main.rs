use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mtlb_cli::config::PLASMA_RTOL;
use mtlb_cli::{load_system, run, write_files, CliError, Command, RangeArgs};

/// Dispersion, reduction and simulation of beam-coupled transmission lines.
#[derive(Debug, Parser)]
#[command(name = "mtlb", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON system file.
    #[arg(long)]
    input: PathBuf,
    /// Directory for the report and any CSV tables.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Relative tolerance between a given xi and the plasma quantities.
    #[arg(long, default_value_t = PLASMA_RTOL)]
    tol: f64,
    /// Swept parameter: xi, u0 or omega.
    #[arg(long)]
    param: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    from: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    to: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Geometric spacing.
    #[arg(long)]
    log: bool,
}

fn threads_from_env() -> Result<(), CliError> {
    let Ok(s) = std::env::var("MTLB_THREADS") else { return Ok(()) };
    let n: usize = s
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("MTLB_THREADS must be a positive integer (got '{s}')")))?;
    mtlb::par::configure_threads(n).map_err(CliError::Validation)
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    threads_from_env()?;
    if !(cli.tol.is_finite() && cli.tol > 0.0) {
        return Err(CliError::Validation("--tol must be positive".into()));
    }
    let sys = load_system(&cli.input, cli.tol)?;
    let range = RangeArgs { param: cli.param, from: cli.from, to: cli.to, points: cli.points, log: cli.log };
    let out = run(cli.command, &sys, &range)?;
    if let Some(dir) = &cli.output {
        write_files(dir, &out)?;
    }
    print!("{}", out.stdout);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
