use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proxstep::commands;

/// Event-capturing time stepping for unilaterally constrained mechanics.
#[derive(Parser)]
#[command(name = "proxstep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write trajectory.csv and diagnostics.json.
    Run {
        /// Scenario JSON file, or `builtin:NAME`.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a halving chain of step sizes and tabulate successive differences.
    Converge {
        #[arg(long)]
        scenario: String,
        /// Comma-separated, each half the previous (e.g. 1e-2,5e-3,2.5e-3).
        #[arg(long, value_delimiter = ',')]
        h_list: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the constraint regularity constants on visited configurations.
    Check {
        #[arg(long)]
        scenario: String,
    },
    /// Print the built-in scenarios.
    ListBuiltins,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenario, h, out } => commands::run(&scenario, h, out),
        Command::Converge {
            scenario,
            h_list,
            out,
        } => commands::converge(&scenario, h_list, out),
        Command::Check { scenario } => commands::check(&scenario),
        Command::ListBuiltins => commands::list_builtins(),
    };
    ExitCode::from(code)
}
