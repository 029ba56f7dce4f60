//! Head-to-head comparison of the four iterative methods on one noisy
//! measurement set (small geometry so the whole run stays fast). The
//! full-size tuned setups live in configs/compare_*.toml; point the CLI
//! at those for the complete experiment.
//!
//! Run with: cargo run --release --example compare_methods

use std::path::Path;

use smr::harness::config::ExperimentConfig;
use smr::harness::runner::{self, Overrides};

fn main() -> smr::Result<()> {
    smr::harness::init_thread_pool()?;
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml");
    let mut cfg = ExperimentConfig::load(&config)?;
    // Per-method regularization, matching the tuned full-size configs.
    cfg.solver.beta2 = 1.9;
    cfg.solver.xi = Some(vec![1.5e-4, 1.5e-4, 1e-6]);
    cfg.solver.nlm_h_factor = 1.25;
    cfg.solver.gamma = Some(vec![0.05, 0.05, 0.02]);
    cfg.solver.tau = Some(vec![4.5e-3, 4.5e-3, 6e-7]);
    cfg.solver.sigma = Some(vec![0.02, 0.025, 3e-4]);

    println!("{:<8} {:<8} {:>12} {:>10} {:>8}", "method", "material", "rmse", "psnr_db", "ssim");
    for method in ["msart", "tvmr", "nlmmr", "bmfmr"] {
        // A separate output directory: all four methods then share the
        // same noisy sinogram, simulated once on the first run.
        let ov = Overrides {
            method: Some(method.into()),
            noise: Some(true),
            seed: Some(11),
            output: Some(cfg.output.dir.with_file_name("compare_demo")),
            ..Default::default()
        };
        let rec = runner::reconstruct(&cfg, &ov)?;
        let n_mat = rec.maps.n_materials();
        for d in rec.diagnostics.iter().rev().take(n_mat).rev() {
            println!(
                "{:<8} {:<8} {:>12.5e} {:>10.2} {:>8.4}",
                method, d.material, d.rmse, d.psnr_db, d.ssim
            );
        }
    }
    Ok(())
}
