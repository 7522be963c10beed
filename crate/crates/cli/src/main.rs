mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use asr_power::workload::{JoinerExpansion, TokenProcess};
use asr_power::PlacementMode;

/// Power, memory-traffic and RTF modeling for on-device streaming
/// transducer ASR.
#[derive(Debug, Parser)]
#[command(name = "asr-power", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Power breakdown, placement and RTF estimate for a model config.
    Analyze(AnalyzeArgs),
    /// Fit the exponential accuracy law to (size, WER) points.
    Fit(FitArgs),
    /// Plan compression steps towards a power-reduction target.
    Plan(PlanArgs),
    /// Replay the decode loop and compare with the analytic rates.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlacementArg {
    Fractional,
    Whole,
}

impl From<PlacementArg> for PlacementMode {
    fn from(p: PlacementArg) -> Self {
        match p {
            PlacementArg::Fractional => PlacementMode::Fractional,
            PlacementArg::Whole => PlacementMode::WholeComponent,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProcessArg {
    Regular,
    Poisson,
}

impl From<ProcessArg> for TokenProcess {
    fn from(p: ProcessArg) -> Self {
        match p {
            ProcessArg::Regular => TokenProcess::Regular,
            ProcessArg::Poisson => TokenProcess::Poisson,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExpansionArg {
    Rounded,
    Geometric,
}

impl From<ExpansionArg> for JoinerExpansion {
    fn from(e: ExpansionArg) -> Self {
        match e {
            ExpansionArg::Rounded => JoinerExpansion::Rounded,
            ExpansionArg::Geometric => JoinerExpansion::Geometric,
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "fractional")]
    placement: PlacementArg,
    /// Overrides `memory.energy_calibration`.
    #[arg(long)]
    calibration: Option<f64>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Directory for report.json and power.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV with component,size_millions,wer_percent[,dataset_tag].
    #[arg(long)]
    points: PathBuf,
    /// Directory for report.json, fit.csv and predictions.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Accuracy points for the compressible components.
    #[arg(long)]
    points: PathBuf,
    /// Requested power reduction in mW.
    #[arg(long)]
    target_mw: f64,
    /// Parameters removed per step, in millions.
    #[arg(long, default_value_t = 0.4)]
    step_m: f64,
    /// Component with no accuracy cost; may be repeated.
    #[arg(long)]
    insensitive: Vec<String>,
    /// Directory for report.json and plan.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Token timestamps (CSV with a `time_s` column); needs --duration-s.
    #[arg(long)]
    utterance: Option<PathBuf>,
    /// Utterance length in seconds.
    #[arg(long)]
    duration_s: Option<f64>,
    /// Token process for generated utterances.
    #[arg(long, value_enum)]
    process: Option<ProcessArg>,
    #[arg(long, value_enum, default_value = "rounded")]
    expansion: ExpansionArg,
    /// Seeds token generation and joiner expansion (default: the config's
    /// utterance seed, else 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report.json and invocations.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status 2 for bad input, 3 for broken internal invariants.
#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Fit(a) => commands::fit(a),
        Command::Plan(a) => commands::plan(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            let (Failure::Input(e) | Failure::Internal(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::Input(anyhow::anyhow!("bad flag")).code(), 2);
        assert_eq!(Failure::Internal(anyhow::anyhow!("broken")).code(), 3);
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
