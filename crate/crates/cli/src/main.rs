//! Command-line front end: phantom rasterization, reference acquisition,
//! reconstruction runs with checkpoint/resume, and report generation.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "toa-tomo", version, about = "Travel-time permittivity tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Flat key-value config file; CLI flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: TOA_TOMO_WORKERS or all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a phantom and write its permittivity map (CSV + PGM).
    Phantom {
        #[command(flatten)]
        common: CommonOpts,
        /// Builtin phantom name (shepp-logan, two-ellipse).
        #[arg(long)]
        builtin: Option<String>,
        /// Phantom spec file (overrides --builtin).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Grid spacing in meters.
        #[arg(long)]
        dx: Option<f64>,
    },
    /// Simulate the true phantom at the finest stage and persist the
    /// measured projections and reference traces.
    Acquire {
        #[command(flatten)]
        common: CommonOpts,
        /// Dump Ez field snapshots every N steps for source 0.
        #[arg(long)]
        dump_fields: Option<usize>,
    },
    /// Run the staged iterative reconstruction against a measured dataset.
    Reconstruct {
        #[command(flatten)]
        common: CommonOpts,
        /// Directory produced by `acquire`.
        #[arg(long)]
        measured: PathBuf,
        /// Write image snapshots every N iterations.
        #[arg(long)]
        snapshot_every: Option<u64>,
        /// Write checkpoints every N iterations.
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Continue a reconstruction from a checkpoint, bit-identically.
    Resume {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint file from a previous run.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory produced by `acquire`.
        #[arg(long)]
        measured: PathBuf,
        #[arg(long)]
        snapshot_every: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Summarize a run directory: residual and error curves plus plots.
    Report {
        /// Run directory containing metrics.csv.
        #[arg(long)]
        run: PathBuf,
    },
    /// Print the smallest resolvable structure size for a timing resolution.
    ResolutionBound {
        /// Timing resolution in seconds.
        #[arg(long)]
        tau: f64,
        /// Background relative permittivity.
        #[arg(long)]
        epsilon: f64,
        /// Permittivity contrast of the structure.
        #[arg(long, default_value_t = 5.0)]
        delta_epsilon: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom { common, builtin, spec, dx } => {
            commands::cmd_phantom(&common, builtin.as_deref(), spec.as_deref(), dx)
        }
        Command::Acquire { common, dump_fields } => commands::cmd_acquire(&common, dump_fields),
        Command::Reconstruct { common, measured, snapshot_every, checkpoint_every } => {
            commands::cmd_reconstruct(&common, &measured, snapshot_every, checkpoint_every, None)
        }
        Command::Resume {
            common,
            checkpoint,
            measured,
            snapshot_every,
            checkpoint_every,
        } => commands::cmd_reconstruct(
            &common,
            &measured,
            snapshot_every,
            checkpoint_every,
            Some(&checkpoint),
        ),
        Command::Report { run } => commands::cmd_report(&run),
        Command::ResolutionBound { tau, epsilon, delta_epsilon } => {
            commands::cmd_resolution_bound(tau, epsilon, delta_epsilon)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub(crate) use CommonOpts as Common;
