use std::path::PathBuf;
use std::process::ExitCode;

use causal_lab::run::{run, RunOptions, Stage};
use clap::Parser;

/// Minimize the causal action of a weighted point measure and audit the result.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    stage: Stage,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Omit timestamps so reruns give identical files.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let options = RunOptions {
        seed: cli.seed,
        deterministic: cli.deterministic,
        quiet: cli.quiet,
    };
    ExitCode::from(run(cli.stage, &cli.config, &cli.out, &options) as u8)
}
