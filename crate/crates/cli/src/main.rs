use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpcox_cli::commands;
use gpcox_cli::config::RunConfig;
use gpcox_core::Result;

#[derive(Parser)]
#[command(name = "gpcox", version, about = "Failure-mode diagnosis and remaining-useful-life prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where this command writes, instead of its configured directory; inputs are still read from the configured paths.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Simulate,
    /// Fit the signal models and the survival posterior.
    Fit,
    /// Predict modes, survival curves and RUL for the test units.
    Predict,
    /// Score predictions against the ground truth.
    Evaluate,
}

fn run(cli: &Cli) -> Result<usize> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.apply_env();
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| match cli.command {
        Command::Simulate => config.paths.dataset_dir.clone(),
        Command::Fit => config.paths.model_dir.clone(),
        Command::Predict | Command::Evaluate => config.paths.output_dir.clone(),
    });
    let written = match cli.command {
        Command::Simulate => commands::simulate(&config, &out)?,
        Command::Fit => commands::fit(&config, &out)?,
        Command::Predict => commands::predict(&config, &out)?,
        Command::Evaluate => commands::evaluate(&config, &out)?,
    };
    Ok(written.len())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(n) => {
            eprintln!("wrote {n} files");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(gpcox_cli::exit_code(&e))
        }
    }
}
