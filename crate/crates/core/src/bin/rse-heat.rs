use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rse_heat::cli::{self, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "rse-heat", version, about = "Stochastic heat equation in a random environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the environment assumptions, divergence-free drift and shift covariance.
    Validate(Common),
    /// Run the ensemble and write checkpoint, sample and replica tables.
    Simulate(Common),
    /// Estimate a^2, its bounds, the CLT metric and the KS check from a simulate run.
    Analyze(Common),
    /// validate, simulate and analyze in sequence.
    Full(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output.directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides ensemble.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "RSE_HEAT_WORKERS")]
    workers: Option<usize>,
    /// Skip the validation gate before simulating.
    #[arg(long)]
    skip_validate: bool,
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let (Command::Validate(c) | Command::Simulate(c) | Command::Analyze(c) | Command::Full(c)) = &args.command;
    let opts = RunOptions { out_dir: c.out.clone(), seed: c.seed, workers: c.workers, skip_validate: c.skip_validate };
    let result = ExperimentConfig::load(&c.config).and_then(|cfg| match args.command {
        Command::Validate(_) => cli::cmd_validate(&cfg, &opts),
        Command::Simulate(_) => cli::cmd_simulate_gated(&cfg, &opts),
        Command::Analyze(_) => cli::cmd_analyze(&cfg, &opts),
        Command::Full(_) => cli::cmd_full(&cfg, &opts),
    });
    match &result {
        Ok(o) => {
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            for m in &o.messages {
                eprintln!("gate failed: {m}");
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(cli::exit_code(&result) as u8)
}
