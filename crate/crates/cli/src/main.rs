//! `magnet`: generate DSBM graphs, export magnetic Laplacians, train and
//! sweep MagNet models, and run the invariant suite.

mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Common, LaplacianArgs};

#[derive(Parser)]
#[command(
    name = "magnet",
    version,
    about = "Magnetic-Laplacian graph learning on directed graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON config file; flags override its keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `magnet-out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Smaller budgets for smoke runs.
    #[arg(long)]
    quick: bool,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            seed: a.seed,
            out: a.out,
            quick: a.quick,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a DSBM graph with labels and features.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Export the magnetic Laplacian of an edge list.
    Laplacian {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        graph: Option<PathBuf>,
        /// Charge parameter (default 0.25).
        #[arg(long)]
        q: Option<f64>,
        /// `unnormalized` (default), `normalized` or `renormalized`.
        #[arg(long)]
        normalization: Option<String>,
        /// Also write the eigenvalues.
        #[arg(long)]
        spectrum: bool,
        /// Accept q outside [0, 0.25].
        #[arg(long)]
        unrestricted_q: bool,
    },
    /// Split, train and evaluate one model.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a model over charge values, seeds and an optional grid.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Write accuracy charts as SVG.
        #[arg(long)]
        plot: bool,
        /// Worker threads; overrides MAGNET_WORKERS.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the spectral and gradient invariant checks.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common } => commands::generate(&common.into()),
        Command::Laplacian {
            common,
            graph,
            q,
            normalization,
            spectrum,
            unrestricted_q,
        } => commands::laplacian(
            &common.into(),
            &LaplacianArgs {
                graph,
                q,
                normalization,
                spectrum,
                unrestricted_q,
            },
        ),
        Command::Train { common } => commands::train(&common.into()),
        Command::Sweep { common, plot, workers } => commands::sweep(&common.into(), plot, workers),
        Command::Verify {
            common,
            inject_sign_flip,
        } => commands::verify(&common.into(), inject_sign_flip),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
