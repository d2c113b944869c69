mod commands;
mod config;
mod export;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Effective coefficients of double-porosity media and the macroscopic
/// filtration problems they define.
#[derive(Parser)]
#[command(name = "poroscale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set macro.n=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default `poroscale_out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the `threads` key.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Crack-cell Stokes problems and the permeability B_c.
    CellStokes(Common),
    /// Pore (and optionally crack) cell elasticity: A_c, A_s and the identity suite.
    CellElastic(Common),
    /// Full pipeline; writes effective_coefficients.json.
    Upscale(Common),
    /// Macroscopic Case I or Case II run, chosen by the regime.
    Macro(Common),
    /// Case II runs for increasing lambda0 against the rigid Darcy solution.
    RigidLimit(Common),
    /// Small-scale invariant battery.
    Verify(Common),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] poroscale::Error),
    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Io(_) => 1,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(_) | CliError::Verify(_) => 2,
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let (common, f): (&Common, fn(&commands::Context) -> Result<(), CliError>) = match &command {
        Command::CellStokes(c) => (c, commands::cell_stokes),
        Command::CellElastic(c) => (c, commands::cell_elastic),
        Command::Upscale(c) => (c, commands::upscale),
        Command::Macro(c) => (c, commands::macro_run),
        Command::RigidLimit(c) => (c, commands::rigid_limit),
        Command::Verify(c) => (c, commands::verify),
    };
    f(&commands::Context::new(common)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
