//! `accon`: generate data, train, evaluate, and run numeric diagnostics for
//! angle-compensated contrastive regression, all driven by one JSON config.

use std::path::PathBuf;

use accon::config::{Overrides, Scale};
use accon::runner::{self, Command};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "accon",
    version,
    about = "Angle-compensated contrastive regression on synthetic data",
    after_help = "Exit codes: 0 success, 1 check failed, 2 input error, 3 numeric failure.\n\
                  ACCON_THREADS caps sweep parallelism."
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train/val/test CSVs and a dataset manifest.
    GenData(CommonArgs),
    /// Train per the configured mode and summarize validation/test quality.
    Train(CommonArgs),
    /// Re-score the best checkpoint on the test split.
    Eval(CommonArgs),
    /// Compare analytic gradients of the full loss to finite differences.
    Gradcheck(CommonArgs),
    /// Survey the contrastive loss's lower-bound inequalities on random batches.
    Boundcheck(CommonArgs),
    /// Train a grid of (gamma, projection width) cells on one shared dataset.
    Sweep(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Problem-size preset filling unset config fields.
    #[arg(long, default_value = "desk", value_parser = parse_scale)]
    scale: Scale,
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    s.parse()
}

fn main() {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::GenData(a) => (Command::GenData, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Gradcheck(a) => (Command::Gradcheck, a),
        Cmd::Boundcheck(a) => (Command::Boundcheck, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    let over = Overrides {
        seed: args.seed,
        out_dir: args.out.map(|p| p.display().to_string()),
    };
    let code = runner::run(command, &args.config, args.scale, &over);
    std::process::exit(i32::from(code));
}
