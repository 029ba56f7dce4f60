//! Simulate multi-bin photon-counting measurements of the default
//! phantom and write the sinogram, the ground-truth maps and a manifest
//! to the configured output directory.
//!
//! Run with: cargo run --release --example simulate_phantom

use std::path::Path;

use smr::harness::config::ExperimentConfig;
use smr::harness::runner::{self, Overrides};

fn main() -> smr::Result<()> {
    smr::harness::init_thread_pool()?;
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml");
    let cfg = ExperimentConfig::load(&config)?;
    let ov = Overrides::default();
    let path = runner::simulate(&cfg, &ov)?;
    println!("sinogram written to {}", path.display());

    let (q_bar, n_views, n_cells) = runner::load_sinogram(path.parent().unwrap())?;
    println!(
        "{} bins x {} rays ({n_views} views x {n_cells} cells)",
        q_bar.dim().0,
        q_bar.dim().1
    );
    for m in 0..q_bar.dim().0 {
        let row = q_bar.row(m);
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("bin {m}: log-transmission range [{min:.3}, {max:.3}]");
    }
    Ok(())
}
