//! File-based command line interface over the experiment harness.
//!
//! All commands read a TOML experiment config; individual settings can
//! be overridden on the command line. Thread count is controlled by the
//! `SMR_THREADS` environment variable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smr::harness::config::ExperimentConfig;
use smr::harness::runner::{self, Overrides};

#[derive(Parser)]
#[command(name = "smr", about = "Spectral CT material reconstruction toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Poisson noise override.
    #[arg(long)]
    noise: Option<bool>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate multi-bin measurements of the configured phantom.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct material maps (simulating measurements first if the
    /// output directory has none).
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Reconstruction method override (msart, tvmr, nlmmr, bmfmr,
        /// fbp-direct).
        #[arg(long)]
        method: Option<String>,
        /// Iteration count override.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Score reconstructed maps against the stored ground truth.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Method whose maps to score.
        #[arg(long)]
        method: Option<String>,
    },
    /// Self-check of the projection-domain decomposition on random rays.
    DecomposeOracle {
        #[command(flatten)]
        common: Common,
        /// Number of random rays to test.
        #[arg(long, default_value_t = 20)]
        rays: usize,
    },
}

fn overrides(common: &Common, method: Option<String>, iterations: Option<usize>) -> Overrides {
    Overrides {
        method,
        output: common.output.clone(),
        seed: common.seed,
        noise: common.noise,
        iterations,
    }
}

fn run() -> smr::Result<()> {
    smr::harness::init_thread_pool()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let path = runner::simulate(&cfg, &overrides(&common, None, None))?;
            println!("wrote {}", path.display());
        }
        Command::Reconstruct { common, method, iterations } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let ov = overrides(&common, method, iterations);
            let rec = runner::reconstruct(&cfg, &ov)?;
            let dir = ov.output.unwrap_or_else(|| cfg.output.dir.clone());
            let method = ov
                .method
                .unwrap_or_else(|| cfg.solver.method.clone());
            println!("wrote {}", runner::maps_path(&dir, &method).display());
            for d in rec.diagnostics.iter().rev().take(rec.maps.n_materials()) {
                println!(
                    "final {}: rmse {:.6} psnr {:.2} dB ssim {:.4}",
                    d.material, d.rmse, d.psnr_db, d.ssim
                );
            }
        }
        Command::Metrics { common, method } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let reports = runner::score(&cfg, &overrides(&common, method, None))?;
            println!("material,rmse,psnr,ssim");
            for (name, r) in reports {
                println!("{name},{},{},{}", r.rmse, r.psnr_db, r.ssim);
            }
        }
        Command::DecomposeOracle { common, rays } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let worst = runner::decompose_oracle(&cfg, &overrides(&common, None, None), rays)?;
            println!("worst relative recovery error over {rays} rays: {worst:.3e}");
            if worst > 1e-3 {
                return Err(smr::SmrError::Config(format!(
                    "decomposition self-check failed: worst relative error {worst:.3e} > 1e-3"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
