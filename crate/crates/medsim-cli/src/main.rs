//! Command-line driver: estimate interventional, path-specific, and
//! multivariate natural effects from a JSON run configuration.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{RunConfig, Severity};

#[derive(Parser)]
#[command(
    name = "medsim",
    version,
    about = "Simulation-based causal mediation analysis with two causally ordered mediators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: load data, fit models, estimate effects,
    /// bootstrap, and write reports.
    Run {
        /// Path to the JSON run configuration.
        config: PathBuf,
        /// Override the configured random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Cap the worker thread count (results do not depend on it).
        #[arg(long)]
        threads: Option<usize>,
        /// Override the configured output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Suppress the effect table on stdout.
        #[arg(long)]
        quiet: bool,
    },
    /// Check a configuration and report all problems without executing.
    Validate {
        /// Path to the JSON run configuration.
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, seed, threads, output_dir, quiet } => {
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("cannot configure thread pool: {e}");
                    return ExitCode::from(run::EXIT_CONFIG as u8);
                }
            }
            let mut cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(run::EXIT_CONFIG as u8);
                }
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let problems = cfg.validate(false);
            for p in &problems {
                match p.severity {
                    Severity::Error => eprintln!("config error: {}", p.message),
                    Severity::Warning => eprintln!("config warning: {}", p.message),
                }
            }
            if problems.iter().any(|p| p.severity == Severity::Error) {
                return ExitCode::from(run::EXIT_CONFIG as u8);
            }
            match run::execute(&cfg, quiet) {
                Ok(_) => ExitCode::SUCCESS,
                Err((code, message)) => {
                    eprintln!("{message}");
                    ExitCode::from(code as u8)
                }
            }
        }
        Command::Validate { config } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(run::EXIT_CONFIG as u8);
                }
            };
            let problems = cfg.validate(true);
            match serde_json::to_string_pretty(&problems) {
                Ok(json) => println!("{json}"),
                Err(e) => {
                    eprintln!("cannot serialize problems: {e}");
                    return ExitCode::from(run::EXIT_CONFIG as u8);
                }
            }
            if problems.iter().any(|p| p.severity == Severity::Error) {
                ExitCode::from(run::EXIT_CONFIG as u8)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
