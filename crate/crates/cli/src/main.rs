use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mcdta::commands::{self, OptimizeArgs, Selection, SimulateArgs, VerifyArgs};

#[derive(Parser)]
#[command(name = "mcdta", version, about = "Simulate and optimally control multi-commodity traffic networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Select {
    Central,
    BelowUncontrolled,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and report every problem found
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run the network forward under recorded or uncontrolled controls
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// controls.json written by `optimize`
        #[arg(long, conflicts_with = "uncontrolled")]
        controls: Option<PathBuf>,
        /// Full speed with the scenario's routing (the default)
        #[arg(long)]
        uncontrolled: bool,
        #[arg(long)]
        plot_cell: Option<String>,
    },
    /// Solve the relaxed program and recover exact controls
    Optimize {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(long)]
        plot_cell: Option<String>,
        /// Also write the program in LP format to this path
        #[arg(long)]
        lp_dump: Option<PathBuf>,
        /// Which optimum to report when several exist
        #[arg(long, value_enum, default_value_t = Select::BelowUncontrolled)]
        select: Select,
    },
    /// Check a relaxed trajectory: feasibility, tightness and optimality
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        /// relaxed.json written by `optimize`
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Validate { scenario } => commands::validate(&scenario),
        Command::Simulate { scenario, out, controls, uncontrolled: _, plot_cell } => {
            commands::simulate(&SimulateArgs { scenario, out, controls, plot_cell })
        }
        Command::Optimize { scenario, out, tol, max_iters, plot_cell, lp_dump, select } => {
            let select = match select {
                Select::Central => Selection::Central,
                Select::BelowUncontrolled => Selection::BelowUncontrolled,
            };
            commands::optimize_cmd(&OptimizeArgs { scenario, out, tol, max_iters, plot_cell, lp_dump, select })
        }
        Command::Verify { scenario, trajectory, out } => commands::verify(&VerifyArgs { scenario, trajectory, out }),
    };
    match res {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
