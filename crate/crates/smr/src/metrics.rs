//! Image quality metrics (RMSE / PSNR / SSIM) against reference material
//! maps, plus the objective values tracked by the iterative solvers.

use ndarray::Array2;

use crate::{Result, SmrError};

/// Per-image metric bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

fn check_same_shape(f: &Array2<f64>, reference: &Array2<f64>) -> Result<()> {
    if f.dim() != reference.dim() {
        return Err(SmrError::Shape(format!(
            "metrics: image {:?} vs reference {:?}",
            f.dim(),
            reference.dim()
        )));
    }
    if f.is_empty() {
        return Err(SmrError::Shape("metrics: empty image".into()));
    }
    Ok(())
}

/// Root-mean-square error sqrt(sum (f - f*)^2 / J).
pub fn rmse(f: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    check_same_shape(f, reference)?;
    let j = f.len() as f64;
    let ss: f64 = f.iter().zip(reference.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok((ss / j).sqrt())
}

/// Peak signal-to-noise ratio 20 log10(max(f*) / RMSE), in dB. The peak is
/// taken over the reference image. Identical images map to +infinity.
pub fn psnr_db(f: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    let e = rmse(f, reference)?;
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak <= 0.0 {
        return Err(SmrError::Config("psnr: reference peak must be positive".into()));
    }
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / e).log10())
}

/// Global structural similarity
///
/// (2 c_f c_f* + e1)(2 sigma_ff* + e2)
/// -----------------------------------------
/// (c_f^2 + c_f*^2 + e1)(sigma_f^2 + sigma_f*^2 + e2)
///
/// with means c, population (co)variances sigma, and stabilizers
/// e1 = (0.01 max f*)^2, e2 = (0.03 max f*)^2 computed over the whole
/// image (single window).
pub fn ssim(f: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    check_same_shape(f, reference)?;
    let j = f.len() as f64;
    let mean_f = f.sum() / j;
    let mean_r = reference.sum() / j;
    let mut var_f = 0.0;
    let mut var_r = 0.0;
    let mut cov = 0.0;
    for (&a, &b) in f.iter().zip(reference.iter()) {
        var_f += (a - mean_f) * (a - mean_f);
        var_r += (b - mean_r) * (b - mean_r);
        cov += (a - mean_f) * (b - mean_r);
    }
    var_f /= j;
    var_r /= j;
    cov /= j;
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak <= 0.0 {
        return Err(SmrError::Config("ssim: reference peak must be positive".into()));
    }
    let e1 = (0.01 * peak) * (0.01 * peak);
    let e2 = (0.03 * peak) * (0.03 * peak);
    Ok(((2.0 * mean_f * mean_r + e1) * (2.0 * cov + e2))
        / ((mean_f * mean_f + mean_r * mean_r + e1) * (var_f + var_r + e2)))
}

/// All three metrics at once.
pub fn report(f: &Array2<f64>, reference: &Array2<f64>) -> Result<MetricsReport> {
    Ok(MetricsReport {
        rmse: rmse(f, reference)?,
        psnr_db: psnr_db(f, reference)?,
        ssim: ssim(f, reference)?,
    })
}

/// Decomposition-stage objective summed over rays:
///
/// sum_l || Theta_l (P_l - P_prev_l) + S_l (q_bar_l - q_l) ||^2
///       + lambda || F_proj_l - P_l ||^2
///
/// with all linearization quantities evaluated at P_prev.
pub fn decomposition_objective(
    model: &crate::spectral::SpectralModel,
    basis: &crate::spectral::BasisAttenuation,
    p: &Array2<f64>,
    p_prev: &Array2<f64>,
    f_proj: &Array2<f64>,
    q_bar: &Array2<f64>,
    lambda: f64,
) -> Result<f64> {
    use rayon::prelude::*;
    let (n_mat, l) = p.dim();
    if p_prev.dim() != (n_mat, l) || f_proj.dim() != (n_mat, l) {
        return Err(SmrError::Shape("decomposition_objective: P shapes differ".into()));
    }
    if q_bar.dim() != (model.n_bins(), l) {
        return Err(SmrError::Shape("decomposition_objective: Q shape mismatch".into()));
    }
    // Chunked ordered reduction keeps the sum independent of thread count.
    const CHUNK: usize = 4096;
    let n_chunks = l.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = 0.0;
            for ray in c * CHUNK..((c + 1) * CHUNK).min(l) {
                let prev: Vec<f64> = (0..n_mat).map(|n| p_prev[[n, ray]]).collect();
                let cur: Vec<f64> = (0..n_mat).map(|n| p[[n, ray]]).collect();
                let proj: Vec<f64> = (0..n_mat).map(|n| f_proj[[n, ray]]).collect();
                let q_col: Vec<f64> = (0..model.n_bins()).map(|m| q_bar[[m, ray]]).collect();
                let lin = crate::decomposition::linearize(model, basis, &prev);
                acc += crate::decomposition::ray_objective(&lin, &q_col, &prev, &proj, lambda, &cur);
            }
            acc
        })
        .collect();
    Ok(partials.iter().sum())
}
