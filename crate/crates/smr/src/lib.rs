//! One-step material reconstruction for spectral (photon-counting) CT.
//!
//! The crate simulates multi-energy-bin measurements of multi-material
//! phantoms under a polychromatic fan-beam forward model and reconstructs
//! per-material fraction maps directly from the log-domain projections.
//!
//! Reconstruction methods:
//! - MSART: alternating per-ray projection decomposition (damped Newton on
//!   the Taylor-linearized transmission model) and a steepest-descent
//!   image update.
//! - BMFMR: MSART plus a block-matching 3D frame regularizer, optimized
//!   with split-Bregman auxiliary / error-feedback variables.
//! - TVMR / NLMMR: total-variation and non-local-means regularized
//!   variants, used as comparison baselines.
//! - FBP-direct: per-bin filtered backprojection followed by per-pixel
//!   linear material inversion (the indirect two-step baseline).
//!
//! See the `examples/` directory for runnable end-to-end pipelines and the
//! `smr` binary for the file-based CLI.

pub mod bm3d;
pub mod decomposition;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod phantom;
pub mod regularizers;
pub mod solvers;
pub mod spectral;

pub use error::SmrError;

/// Crate result alias.
pub type Result<T> = std::result::Result<T, SmrError>;
