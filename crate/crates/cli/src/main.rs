mod analyze;
mod manifest;
mod report;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "netexposure", version, about = "Exposure mapping for experiments under network interference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate exposure conditions and effects from an observed experiment.
    Analyze(analyze::AnalyzeArgs),
    /// Run synthetic replications with known ground truth.
    Simulate(simulate::SimulateArgs),
    /// Render report.md from the artifacts in a run directory.
    Report(report::ReportArgs),
}

/// Flags shared by `analyze` and `simulate`.
#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct Common {
    /// Assignment replicates for exposure probabilities.
    #[arg(long, default_value_t = 500)]
    pub replicates: usize,
    /// Bootstrap resamples for standard errors.
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    /// Probability threshold for positivity.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Tolerated share of units at or below `epsilon`.
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap on worker threads. Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

/// Exposure conditions failed positivity and the caller asked for a hard stop.
#[derive(Debug)]
pub struct PositivityFailure(pub String);

impl std::fmt::Display for PositivityFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "positivity failure: {}", self.0)
    }
}

impl std::error::Error for PositivityFailure {}

/// Input missing or malformed at the CLI level.
#[derive(Debug)]
pub struct Validation(pub String);

impl std::fmt::Display for Validation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}

fn exit_code(e: &anyhow::Error) -> u8 {
    use netexposure::Error as E;
    if e.downcast_ref::<PositivityFailure>().is_some() {
        return 3;
    }
    if e.downcast_ref::<Validation>().is_some() || e.downcast_ref::<std::io::Error>().is_some() {
        return 2;
    }
    match e.downcast_ref::<E>() {
        Some(E::Positivity(_) | E::Selection(_)) => 3,
        Some(
            E::Parse { .. }
            | E::UnknownAttributeIds(_)
            | E::Index { .. }
            | E::Argument(_)
            | E::Schema(_)
            | E::Config(_)
            | E::Fit(_)
            | E::Io(_)
            | E::Csv(_)
            | E::Json(_),
        ) => 2,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Analyze(a) => analyze::run(a),
        Command::Simulate(s) => simulate::run(s),
        Command::Report(r) => report::run(r),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn init_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        netexposure::par::init_threads(t.max(1));
    }
}
