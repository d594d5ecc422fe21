//! Command-line front end for pulse optimization, fidelity sweeps,
//! evaluation, and transfer-map analysis.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure. Set `RYDPULSE_THREADS` to cap the worker pool.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Overrides;
use rydpulse_core::error::Error;

#[derive(Parser)]
#[command(
    name = "rydpulse",
    version,
    about = "Pulse synthesis and simulation for single-control multi-target Rydberg gates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a pulse with multi-restart Adam and write the artifacts.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Override the root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Zero out decay and motion regardless of the config.
        #[arg(long)]
        no_noise: bool,
        /// Skip the run when the output directory already holds a
        /// complete run for the same config and seed.
        #[arg(long)]
        resume: bool,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Optimize every cell of the configured duration × radius grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Keep finished cells from a previous interrupted run and
        /// compute only the missing ones.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Evaluate a pulse file's fidelity under the configured noise.
    Evaluate {
        /// Pulse artifact: the JSON written by `optimize`, or a bare
        /// schedule CSV.
        #[arg(long)]
        pulse: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_noise: bool,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Pauli-transfer-map analysis of a pulse against the ideal gate.
    Ptm {
        #[arg(long, required_unless_present = "self_test")]
        pulse: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_noise: bool,
        /// Also render SVG heat maps.
        #[arg(long)]
        svg: bool,
        /// Check the computed map of the exact gate unitary against the
        /// analytic one instead of loading a pulse.
        #[arg(long)]
        self_test: bool,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Parse and validate a config file without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NumericalFailure(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("RYDPULSE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                if let Err(e) = rydpulse_core::parallel::configure_thread_pool(n) {
                    eprintln!("error: RYDPULSE_THREADS: {e}");
                    return ExitCode::from(2);
                }
            }
            _ => {
                eprintln!("error: RYDPULSE_THREADS must be a positive integer (got {v:?})");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Optimize {
            config,
            seed,
            no_noise,
            resume,
            output_dir,
        } => commands::cmd_optimize(
            config,
            &Overrides {
                seed: *seed,
                no_noise: *no_noise,
                resume: *resume,
                output_dir: output_dir.clone(),
            },
        ),
        Command::Sweep {
            config,
            seed,
            resume,
            output_dir,
        } => commands::cmd_sweep(
            config,
            &Overrides {
                seed: *seed,
                resume: *resume,
                output_dir: output_dir.clone(),
                ..Overrides::default()
            },
        ),
        Command::Evaluate {
            pulse,
            config,
            seed,
            no_noise,
            output_dir,
        } => commands::cmd_evaluate(
            pulse,
            config,
            &Overrides {
                seed: *seed,
                no_noise: *no_noise,
                output_dir: output_dir.clone(),
                ..Overrides::default()
            },
        ),
        Command::Ptm {
            pulse,
            config,
            seed,
            no_noise,
            svg,
            self_test,
            output_dir,
        } => commands::cmd_ptm(
            pulse.as_deref(),
            config,
            &Overrides {
                seed: *seed,
                no_noise: *no_noise,
                output_dir: output_dir.clone(),
                ..Overrides::default()
            },
            *svg,
            *self_test,
        ),
        Command::ValidateConfig { config } => commands::cmd_validate_config(config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
