use clap::{Parser, Subcommand};
use hetrom::cli::{self, runner};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hetrom",
    about = "Ranked-range robust meta-learning experiments on synthetic task pools",
    version
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// Experiment config file (key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for all artifacts
    #[arg(long, default_value = "hetrom-out")]
    out: PathBuf,
    /// Override the config's model seed
    #[arg(long)]
    seed_model: Option<u64>,
    /// Override the config's data seed
    #[arg(long)]
    seed_data: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and evaluate it on held-out clean tasks
    Train(Common),
    /// Evaluate a checkpoint (or the initial model) on pool and test tasks
    Eval(Common),
    /// Run the (k, m) grid and emit an accuracy table
    SweepKm(Common),
    /// Compare training on all tasks vs. the highest-loss half
    SensitivityMajority(Common),
    /// Compare training on a clean pool vs. a label-flipped pool
    SensitivityNoisy(Common),
    /// Track which batch slot carries the highest loss with one planted outlier
    SensitivityOutlier(Common),
    /// Grouped pool-loss histograms from a checkpoint
    Histogram(Common),
}

fn execute(sub: runner::Subcommand, common: &Common) -> Result<runner::RunSummary, cli::CliError> {
    let mut config = cli::parse_config(&common.config)
        .map_err(|e| cli::CliError::Config(e.to_string()))?;
    config.override_seeds(common.seed_model, common.seed_data);
    runner::run(sub, &config, &common.out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (sub, common) = match &args.command {
        Command::Train(c) => (runner::Subcommand::Train, c),
        Command::Eval(c) => (runner::Subcommand::Eval, c),
        Command::SweepKm(c) => (runner::Subcommand::SweepKm, c),
        Command::SensitivityMajority(c) => (runner::Subcommand::SensitivityMajority, c),
        Command::SensitivityNoisy(c) => (runner::Subcommand::SensitivityNoisy, c),
        Command::SensitivityOutlier(c) => (runner::Subcommand::SensitivityOutlier, c),
        Command::Histogram(c) => (runner::Subcommand::Histogram, c),
    };
    match execute(sub, common) {
        Ok(summary) => {
            print!("{}", summary.render());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
