use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridlock::cli::{cmd_build, cmd_design, cmd_simulate, cmd_sweep, Options};

/// Synthesise and simulate load-altering attacks on a grid model.
#[derive(Parser)]
#[command(name = "gridlock", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file; the built-in two-area scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory, overriding the scenario's `outputs`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl From<Common> for Options {
    fn from(c: Common) -> Self {
        Options {
            scenario: c.scenario,
            out: c.out,
            seed: c.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the state-space model and print its dimensions and modes.
    Build {
        /// Grid file or `kundur2area`.
        grid: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Design and verify the attack gain, writing a gain artifact.
    Design {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the attacked grid; writes trace, thresholds and plots.
    Simulate {
        /// Gain artifact to use instead of the scenario's own design.
        #[arg(long)]
        gain: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Threshold-crossing table over the scenario's caps.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build { grid, common } => cmd_build(grid.as_deref(), &common.into()),
        Command::Design { common } => cmd_design(&common.into()),
        Command::Simulate { gain, common } => cmd_simulate(&common.into(), gain.as_deref()),
        Command::Sweep { common } => cmd_sweep(&common.into()),
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.text);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
