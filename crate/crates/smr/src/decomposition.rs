//! Per-ray projection decomposition: Taylor linearization of the
//! log-domain transmission model and the damped regularized Newton update
//! that splits multi-bin measurements into per-material line integrals.

use ndarray::Array2;
use rayon::prelude::*;

use crate::spectral::{BasisAttenuation, SpectralModel};
use crate::{Result, SmrError};

/// Matrix of per-material line integrals (N materials x L rays).
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedSinogram {
    pub p: Array2<f64>,
}

impl DecomposedSinogram {
    pub fn zeros(n_materials: usize, n_rays: usize) -> Self {
        Self { p: Array2::zeros((n_materials, n_rays)) }
    }

    pub fn n_materials(&self) -> usize {
        self.p.dim().0
    }

    pub fn n_rays(&self) -> usize {
        self.p.dim().1
    }
}

/// Linearization of the transmission model at one ray's current line
/// integrals: sensitivity matrix Theta (M x N, row-major), transmission
/// fractions S (per bin) and log-transmissions q.
#[derive(Debug, Clone)]
pub struct RayLinearization {
    pub n_bins: usize,
    pub n_materials: usize,
    /// Theta[m * n_materials + n] = -dS_m / dp_n, strictly positive.
    pub theta: Vec<f64>,
    pub s: Vec<f64>,
    pub q: Vec<f64>,
}

/// Linearize the transmission model at `p_col`.
///
/// Theta_mn = sum_i phi_n s_m dE_i exp(-sum_n phi_n p_n), S_m the same sum
/// without phi_n, q_m = ln S_m. A single pass over the energy grid fills
/// all bins (each sample belongs to exactly one bin).
pub fn linearize(model: &SpectralModel, basis: &BasisAttenuation, p_col: &[f64]) -> RayLinearization {
    let m_bins = model.n_bins();
    let n_mat = basis.n_materials();
    debug_assert_eq!(p_col.len(), n_mat);
    let mut theta = vec![0.0; m_bins * n_mat];
    let mut s = vec![0.0; m_bins];
    for (m, &(start, end)) in model.bin_ranges.iter().enumerate() {
        for i in start..end {
            let mut att = 0.0;
            for (n, &p) in p_col.iter().enumerate() {
                att += basis.phi[[n, i]] * p;
            }
            if -att <= -700.0 {
                continue;
            }
            let w = model.s[[m, i]] * model.grid.delta_kev[i] * (-att).exp();
            s[m] += w;
            for n in 0..n_mat {
                theta[m * n_mat + n] += basis.phi[[n, i]] * w;
            }
        }
    }
    let q = s.iter().map(|&v| v.ln()).collect();
    RayLinearization { n_bins: m_bins, n_materials: n_mat, theta, s, q }
}

/// Solve (Theta^T Theta + lambda I) x = rhs by Cholesky factorization.
/// The system is symmetric positive definite for lambda > 0.
fn solve_spd(h: &mut [f64], rhs: &mut [f64], n: usize) {
    // In-place Cholesky H = L L^T (lower triangle).
    for j in 0..n {
        for k in 0..j {
            let ljk = h[j * n + k];
            for i in j..n {
                h[i * n + j] -= h[i * n + k] * ljk;
            }
        }
        let d = h[j * n + j].sqrt();
        h[j * n + j] = d;
        for i in j + 1..n {
            h[i * n + j] /= d;
        }
    }
    // Forward substitution L y = rhs.
    for i in 0..n {
        let mut v = rhs[i];
        for k in 0..i {
            v -= h[i * n + k] * rhs[k];
        }
        rhs[i] = v / h[i * n + i];
    }
    // Back substitution L^T x = y.
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in i + 1..n {
            v -= h[k * n + i] * rhs[k];
        }
        rhs[i] = v / h[i * n + i];
    }
}

/// One damped update of a ray's line integrals toward the minimizer of the
/// linearized per-ray objective:
///
/// p <- p - beta1 (Theta^T Theta + lambda I)^-1 Theta^T S (q_bar - q).
pub fn update_ray(
    p_col: &[f64],
    lin: &RayLinearization,
    q_bar: &[f64],
    beta1: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = lin.n_materials;
    let m_bins = lin.n_bins;
    // rhs = Theta^T S_diag (q_bar - q).
    let mut rhs = vec![0.0; n];
    for m in 0..m_bins {
        let w = lin.s[m] * (q_bar[m] - lin.q[m]);
        for i in 0..n {
            rhs[i] += lin.theta[m * n + i] * w;
        }
    }
    // H = Theta^T Theta + lambda I.
    let mut h = vec![0.0; n * n];
    for m in 0..m_bins {
        let row = &lin.theta[m * n..(m + 1) * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        h[i * n + i] += lambda;
    }
    solve_spd(&mut h, &mut rhs, n);
    p_col.iter().zip(&rhs).map(|(&p, &d)| p - beta1 * d).collect()
}

/// Apply linearize + update_ray independently to every ray.
pub fn decompose_step(
    p: &DecomposedSinogram,
    q_bar: &Array2<f64>,
    model: &SpectralModel,
    basis: &BasisAttenuation,
    beta1: f64,
    lambda: f64,
) -> Result<DecomposedSinogram> {
    let (n_mat, l) = p.p.dim();
    if q_bar.dim() != (model.n_bins(), l) {
        return Err(SmrError::Shape(format!(
            "decompose_step: Q has shape {:?}, expected ({}, {l})",
            q_bar.dim(),
            model.n_bins()
        )));
    }
    if n_mat != basis.n_materials() {
        return Err(SmrError::Shape("decompose_step: P/basis material mismatch".into()));
    }
    let m_bins = model.n_bins();
    let cols: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|ray| {
            let p_col: Vec<f64> = (0..n_mat).map(|nn| p.p[[nn, ray]]).collect();
            let q_col: Vec<f64> = (0..m_bins).map(|m| q_bar[[m, ray]]).collect();
            let lin = linearize(model, basis, &p_col);
            update_ray(&p_col, &lin, &q_col, beta1, lambda)
        })
        .collect();
    let mut out = Array2::<f64>::zeros((n_mat, l));
    for (ray, col) in cols.iter().enumerate() {
        for nn in 0..n_mat {
            out[[nn, ray]] = col[nn];
        }
    }
    Ok(DecomposedSinogram { p: out })
}

/// Value of the single-ray decomposition objective
/// || Theta (p - p_prev) + S (q_bar - q) ||^2 + lambda || f_proj - p ||^2
/// at a candidate point. Test oracle support.
pub fn ray_objective(
    lin: &RayLinearization,
    q_bar: &[f64],
    p_prev: &[f64],
    f_proj: &[f64],
    lambda: f64,
    candidate: &[f64],
) -> f64 {
    let n = lin.n_materials;
    let mut total = 0.0;
    for m in 0..lin.n_bins {
        let mut r = lin.s[m] * (q_bar[m] - lin.q[m]);
        for i in 0..n {
            r += lin.theta[m * n + i] * (candidate[i] - p_prev[i]);
        }
        total += r * r;
    }
    for i in 0..n {
        let d = f_proj[i] - candidate[i];
        total += lambda * d * d;
    }
    total
}

/// Brute-force minimizer of the single-ray objective: coarse grid search
/// refined by coordinate descent. Independent oracle for the regularized
/// Newton step; practical only for N <= 2.
pub fn brute_force_minimize_y(
    lin: &RayLinearization,
    q_bar: &[f64],
    p_prev: &[f64],
    f_proj: &[f64],
    lambda: f64,
    lo: &[f64],
    hi: &[f64],
    grid_points: usize,
) -> Vec<f64> {
    let n = lin.n_materials;
    assert!(n <= 2, "brute-force oracle limited to N <= 2");
    let coords = |idx: &[usize], steps: &[f64]| -> Vec<f64> {
        (0..n).map(|i| lo[i] + idx[i] as f64 * steps[i]).collect()
    };
    let steps: Vec<f64> = (0..n).map(|i| (hi[i] - lo[i]) / (grid_points - 1) as f64).collect();
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut idx = vec![0usize; n];
    loop {
        let cand = coords(&idx, &steps);
        let y = ray_objective(lin, q_bar, p_prev, f_proj, lambda, &cand);
        if y < best.0 {
            best = (y, cand);
        }
        // Odometer increment.
        let mut dim = 0;
        loop {
            if dim == n {
                // Refine by per-coordinate ternary descent around the best
                // grid point.
                let mut x = best.1.clone();
                let mut span: Vec<f64> = steps.clone();
                for _ in 0..200 {
                    for i in 0..n {
                        let mut lo_i = x[i] - span[i];
                        let mut hi_i = x[i] + span[i];
                        for _ in 0..60 {
                            let a = lo_i + (hi_i - lo_i) / 3.0;
                            let b = hi_i - (hi_i - lo_i) / 3.0;
                            let mut xa = x.clone();
                            xa[i] = a;
                            let mut xb = x.clone();
                            xb[i] = b;
                            let ya = ray_objective(lin, q_bar, p_prev, f_proj, lambda, &xa);
                            let yb = ray_objective(lin, q_bar, p_prev, f_proj, lambda, &xb);
                            if ya < yb {
                                hi_i = b;
                            } else {
                                lo_i = a;
                            }
                        }
                        x[i] = 0.5 * (lo_i + hi_i);
                    }
                    for s in span.iter_mut() {
                        *s *= 0.5;
                    }
                }
                return x;
            }
            idx[dim] += 1;
            if idx[dim] < grid_points {
                break;
            }
            idx[dim] = 0;
            dim += 1;
        }
    }
}
