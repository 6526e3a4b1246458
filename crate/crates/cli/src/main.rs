//! `lcrl`: config-driven experiments for episodic linear-convex learning.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lcrl", version, about = "Episodic linear-convex reinforcement learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Experiment configuration (TOML)
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides `sim.seed`
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output.dir`
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo loops
    #[arg(long)]
    pub threads: Option<usize>,
    /// Independent runs; overrides `gls.runs`
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati equation; writes riccati.csv and policy.json
    Riccati(Common),
    /// Simulate episodes; writes trajectory CSVs and stats.json
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Policy file (JSON); defaults to the optimal LQ policy
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run greedy least-squares learning; writes report.jsonl, estimates.jsonl, regret.csv
    Gls(Common),
    /// Print the expected cost of a policy on the configured system
    Eval {
        #[command(flatten)]
        common: Common,
        /// Policy file (JSON); defaults to the optimal LQ policy
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Exceedance curve of an episode statistic; writes concentration.csv
    Concentration(Common),
    /// Scalar decoupling field; writes field.csv
    Decouple(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Riccati(c) => commands::riccati(&c),
        Command::Simulate { common, policy } => commands::simulate(&common, policy.as_deref()),
        Command::Gls(c) => commands::gls(&c),
        Command::Eval { common, policy } => commands::eval(&common, policy.as_deref()),
        Command::Concentration(c) => commands::concentration(&c),
        Command::Decouple(c) => commands::decouple(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err
                .downcast_ref::<lcrl::Error>()
                .is_some_and(lcrl::Error::is_validation);
            ExitCode::from(if validation { 2 } else { 3 })
        }
    }
}
