//! Command-line front end: certify, solve, verify and sweep.
//!
//! Every command reads an instance file, writes its results under `--out`
//! and leaves a `manifest.json` describing the run next to them.

pub mod commands;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{run, run_from};
pub use error::{exit, CliError};
pub use manifest::{ResolvedSettings, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "prodplan", version, about = "Regime-switching production planning solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify the sub-solution constants and iteration shifts.
    Certify(CertifyArgs),
    /// Solve the value system and export fields, policy and trace.
    Solve(SolveArgs),
    /// Solve, then check the policy by Monte Carlo against challengers.
    Verify(VerifyArgs),
    /// Repeat the solve and cost estimate over values of one parameter.
    Sweep(SweepArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Certify(_) => "certify",
            Command::Solve(_) => "solve",
            Command::Verify(_) => "verify",
            Command::Sweep(_) => "sweep",
        }
    }

    pub fn io(&self) -> &IoArgs {
        match self {
            Command::Certify(a) => &a.io,
            Command::Solve(a) => &a.io,
            Command::Verify(a) => &a.io,
            Command::Sweep(a) => &a.io,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct IoArgs {
    /// Instance file (JSON).
    pub instance: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Nodes per axis [default: 129, 65, 33 for N = 1, 2, 3].
    #[arg(long)]
    pub grid: Option<usize>,
    /// Stop once the largest update falls below this.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 200_000)]
    pub paths: usize,
    /// Euler step [default: 1e-3 R² / max σ²].
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Number of optimal-policy paths written to paths.csv.
    #[arg(long, default_value_t = 20)]
    pub export_paths: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    A1,
    A2,
    Alpha1,
    Alpha2,
    Sigma1,
    Sigma2,
    #[value(name = "R")]
    Radius,
}

impl SweepParam {
    pub fn label(self) -> &'static str {
        match self {
            SweepParam::A1 => "a1",
            SweepParam::A2 => "a2",
            SweepParam::Alpha1 => "alpha1",
            SweepParam::Alpha2 => "alpha2",
            SweepParam::Sigma1 => "sigma1",
            SweepParam::Sigma2 => "sigma2",
            SweepParam::Radius => "R",
        }
    }
}
