use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use tapsolve_cli::commands::{self, parse_enum, Overrides};
use tapsolve_core::{CostMode, ModelKind, SolverKind};

/// Path-based user-equilibrium traffic assignment.
#[derive(Parser)]
#[command(name = "tapsolve", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario file and write the result set.
    Solve(SolveArgs),
    /// Solve several scenarios sharing a network and measure each solution
    /// inside the reference scenario's traffic model.
    Compare(CompareArgs),
    /// Check a scenario file without solving it.
    Validate {
        /// Scenario file (JSON).
        scenario: PathBuf,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Output directory for the result files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the convergence tolerance.
    #[arg(long)]
    eps: Option<f64>,
    /// Override the iteration budget.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Override the extragradient initial step length.
    #[arg(long)]
    tau0: Option<f64>,
    /// Override the traffic model (static, mn, ctm).
    #[arg(long, value_parser = |s: &str| parse_enum::<ModelKind>("model", s).map_err(|e| e.to_string()))]
    model: Option<ModelKind>,
    /// Override the cost mode (bpr, instantaneous, actual).
    #[arg(long, value_parser = |s: &str| parse_enum::<CostMode>("cost mode", s).map_err(|e| e.to_string()))]
    cost_mode: Option<CostMode>,
    /// Override the solver (fw, msa, epm, msa_then_epm).
    #[arg(long, value_parser = |s: &str| parse_enum::<SolverKind>("solver", s).map_err(|e| e.to_string()))]
    solver: Option<SolverKind>,
}

#[derive(Args)]
struct CompareArgs {
    /// Scenario whose model defines the comparison space; must be dynamic.
    #[arg(long)]
    reference: PathBuf,
    /// Further scenario files to solve and compare.
    #[arg(required = true)]
    members: Vec<PathBuf>,
    /// Output directory for the metrics files and summary.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn run() -> Result<i32> {
    match Cli::parse().command {
        Command::Solve(args) => {
            let overrides = Overrides {
                eps: args.eps,
                max_iters: args.max_iters,
                tau0: args.tau0,
                model: args.model,
                cost_mode: args.cost_mode,
                solver: args.solver,
            };
            commands::solve(&args.scenario, &args.out, &overrides)
        }
        Command::Compare(args) => commands::compare(&args.reference, &args.members, &args.out),
        Command::Validate { scenario } => commands::validate(&scenario),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
