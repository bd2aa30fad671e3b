use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Micro-macro simulator for dilute polymeric fluids: variable-density
/// Navier-Stokes coupled to a FENE bead-spring-chain Fokker-Planck equation.
#[derive(Parser)]
#[command(name = "polykin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured simulation and write series.csv, snapshots/ and
    /// meta.json.
    Run {
        config: PathBuf,
        /// Output directory (overrides POLYKIN_OUT and the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Snapshot cadence in steps.
        #[arg(long)]
        cadence: Option<usize>,
        /// Seed for random-field initial data.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a short segment and gate on the structural invariant suite.
    Check {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute the configured refinement ladders and write sweep.csv.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the equilibrium fixed point over 100 steps.
    Equilibrium { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, cadence, seed } => {
            polykin::cli::cmd_run(&config, out.as_deref(), cadence, seed)
        }
        Command::Check { config, out } => polykin::cli::cmd_check(&config, out.as_deref()),
        Command::Sweep { config, out } => polykin::cli::cmd_sweep(&config, out.as_deref()),
        Command::Equilibrium { config } => polykin::cli::cmd_equilibrium(&config),
    };
    ExitCode::from(code as u8)
}
