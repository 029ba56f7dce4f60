//! Image-domain regularizers used by the baseline reconstructions:
//! smoothed isotropic total variation descent and non-local means
//! filtering.

use ndarray::Array2;
use rayon::prelude::*;

use crate::{Result, SmrError};

/// Total-variation regularization parameters.
#[derive(Debug, Clone, Copy)]
pub struct TvParams {
    /// Regularization strength multiplying the TV gradient step.
    pub xi: f64,
    /// Smoothing constant inside the square root; keeps the gradient
    /// defined on flat regions.
    pub smoothing_eps: f64,
    /// Gradient-descent steps applied per outer iteration.
    pub n_inner_steps: usize,
    /// Step size of each inner descent step.
    pub step_size: f64,
}

impl Default for TvParams {
    fn default() -> Self {
        Self { xi: 0.1, smoothing_eps: 1e-8, n_inner_steps: 10, step_size: 0.1 }
    }
}

/// Smoothed isotropic TV value: sum over pixels of
/// sqrt(dx^2 + dy^2 + eps^2) with forward differences and Neumann
/// (replicate) boundary handling.
pub fn tv_value(f: &Array2<f64>, eps: f64) -> f64 {
    let (rows, cols) = f.dim();
    let mut total = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let dx = if c + 1 < cols { f[[r, c + 1]] - f[[r, c]] } else { 0.0 };
            let dy = if r + 1 < rows { f[[r + 1, c]] - f[[r, c]] } else { 0.0 };
            total += (dx * dx + dy * dy + eps * eps).sqrt();
        }
    }
    total
}

/// Gradient of the smoothed TV value with respect to every pixel.
fn tv_gradient(f: &Array2<f64>, eps: f64) -> Array2<f64> {
    let (rows, cols) = f.dim();
    // Per-pixel normalizer of the forward-difference stencil rooted there.
    let mut denom = Array2::<f64>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let dx = if c + 1 < cols { f[[r, c + 1]] - f[[r, c]] } else { 0.0 };
            let dy = if r + 1 < rows { f[[r + 1, c]] - f[[r, c]] } else { 0.0 };
            denom[[r, c]] = (dx * dx + dy * dy + eps * eps).sqrt();
        }
    }
    let mut grad = Array2::<f64>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut g = 0.0;
            // Stencil rooted at (r, c): -(dx + dy) / denom.
            let dx = if c + 1 < cols { f[[r, c + 1]] - f[[r, c]] } else { 0.0 };
            let dy = if r + 1 < rows { f[[r + 1, c]] - f[[r, c]] } else { 0.0 };
            g -= (dx + dy) / denom[[r, c]];
            // Stencil rooted at the left neighbor contributes +dx term.
            if c > 0 {
                let dxl = f[[r, c]] - f[[r, c - 1]];
                g += dxl / denom[[r, c - 1]];
            }
            // Stencil rooted at the lower-row neighbor contributes +dy.
            if r > 0 {
                let dyu = f[[r, c]] - f[[r - 1, c]];
                g += dyu / denom[[r - 1, c]];
            }
            grad[[r, c]] = g;
        }
    }
    grad
}

/// Apply `n_inner_steps` of TV gradient descent scaled by `xi`. With
/// `xi = 0` the image is returned bit-identically.
pub fn tv_descent_step(f: &Array2<f64>, params: &TvParams) -> Array2<f64> {
    if params.xi == 0.0 {
        return f.clone();
    }
    let mut out = f.clone();
    for _ in 0..params.n_inner_steps {
        let g = tv_gradient(&out, params.smoothing_eps);
        out = &out - &(&g * (params.xi * params.step_size));
    }
    out
}

/// Non-local means parameters.
#[derive(Debug, Clone, Copy)]
pub struct NlmParams {
    /// Half-width of the comparison patch (patch side 2r + 1).
    pub patch_radius: usize,
    /// Half-width of the search window around each pixel.
    pub window_radius: usize,
    /// Filtering bandwidth h; weights decay as exp(-d^2 / h^2).
    pub filtering_h: f64,
}

impl Default for NlmParams {
    fn default() -> Self {
        Self { patch_radius: 2, window_radius: 5, filtering_h: 0.1 }
    }
}

/// Mean squared difference between the patches centered at `a` and `b`,
/// with replicate boundary handling.
fn patch_distance_sq(f: &Array2<f64>, a: (usize, usize), b: (usize, usize), radius: usize) -> f64 {
    let (rows, cols) = f.dim();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut total = 0.0;
    let side = (2 * radius + 1) * (2 * radius + 1);
    for dr in -(radius as isize)..=radius as isize {
        for dc in -(radius as isize)..=radius as isize {
            let va = f[[clamp(a.0 as isize + dr, rows), clamp(a.1 as isize + dc, cols)]];
            let vb = f[[clamp(b.0 as isize + dr, rows), clamp(b.1 as isize + dc, cols)]];
            total += (va - vb) * (va - vb);
        }
    }
    total / side as f64
}

/// Non-local means filter: each output pixel is a weighted average of
/// window pixels, with weights exp(-patch_distance^2 / h^2) normalized to
/// sum to one. The self weight is included (distance zero, weight one).
pub fn nlm_filter(f: &Array2<f64>, params: &NlmParams) -> Result<Array2<f64>> {
    if params.filtering_h <= 0.0 {
        return Err(SmrError::Config("nlm: filtering_h must be positive".into()));
    }
    let (rows, cols) = f.dim();
    if rows == 0 || cols == 0 {
        return Err(SmrError::Shape("nlm: empty image".into()));
    }
    let h2 = params.filtering_h * params.filtering_h;
    let w = params.window_radius as isize;
    let out_rows: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            (0..cols)
                .map(|c| {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for dr in -w..=w {
                        let rr = r as isize + dr;
                        if rr < 0 || rr >= rows as isize {
                            continue;
                        }
                        for dc in -w..=w {
                            let cc = c as isize + dc;
                            if cc < 0 || cc >= cols as isize {
                                continue;
                            }
                            let d2 = patch_distance_sq(
                                f,
                                (r, c),
                                (rr as usize, cc as usize),
                                params.patch_radius,
                            );
                            let wgt = (-d2 / h2).exp();
                            num += wgt * f[[rr as usize, cc as usize]];
                            den += wgt;
                        }
                    }
                    num / den
                })
                .collect()
        })
        .collect();
    let mut out = Array2::<f64>::zeros((rows, cols));
    for (r, row) in out_rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[[r, c]] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tv_of_constant_is_eps_floor() {
        let f = Array2::from_elem((5, 5), 3.0);
        let eps = 1e-8;
        let v = tv_value(&f, eps);
        assert!((v - 25.0 * eps).abs() < 1e-20);
    }

    #[test]
    fn tv_of_vertical_step_hand_case() {
        // 4x4 image, left half 0 / right half 1: the jump column
        // contributes |dx| = 1 per row.
        let mut f = Array2::<f64>::zeros((4, 4));
        for r in 0..4 {
            f[[r, 2]] = 1.0;
            f[[r, 3]] = 1.0;
        }
        let v = tv_value(&f, 0.0);
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Array2::from_shape_fn((7, 6), |_| rng.gen_range(-1.0..1.0f64));
        let eps = 1e-3;
        let g = tv_gradient(&f, eps);
        let h = 1e-6;
        for r in 0..7 {
            for c in 0..6 {
                let mut fp = f.clone();
                fp[[r, c]] += h;
                let mut fm = f.clone();
                fm[[r, c]] -= h;
                let fd = (tv_value(&fp, eps) - tv_value(&fm, eps)) / (2.0 * h);
                assert!(
                    (g[[r, c]] - fd).abs() < 1e-5 * fd.abs().max(1.0),
                    "pixel ({r},{c}): {} vs {fd}",
                    g[[r, c]]
                );
            }
        }
    }

    #[test]
    fn tv_descent_decreases_tv() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0.0..1.0f64));
        let params = TvParams { xi: 0.5, step_size: 0.05, ..TvParams::default() };
        let out = tv_descent_step(&f, &params);
        assert!(tv_value(&out, params.smoothing_eps) < tv_value(&f, params.smoothing_eps));
    }

    #[test]
    fn tv_zero_strength_is_identity() {
        let f = array![[0.1, 0.2], [0.3, 0.4]];
        let params = TvParams { xi: 0.0, ..TvParams::default() };
        let out = tv_descent_step(&f, &params);
        assert_eq!(out, f);
    }

    #[test]
    fn nlm_preserves_constant_images() {
        let f = Array2::from_elem((12, 12), 0.7);
        let out = nlm_filter(&f, &NlmParams::default()).unwrap();
        for &v in out.iter() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn nlm_output_within_input_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let f = Array2::from_shape_fn((20, 20), |_| rng.gen_range(-2.0..3.0f64));
        let out = nlm_filter(&f, &NlmParams { filtering_h: 0.5, ..NlmParams::default() }).unwrap();
        let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &v in out.iter() {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn nlm_denoises_piecewise_constant() {
        // Noisy two-level image: filtering should cut the noise RMSE.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clean = Array2::from_shape_fn((24, 24), |(r, _)| if r < 12 { 0.0 } else { 1.0 });
        let noisy = &clean + &Array2::from_shape_fn((24, 24), |_| rng.gen_range(-0.1..0.1f64));
        let out = nlm_filter(&noisy, &NlmParams { filtering_h: 0.3, ..NlmParams::default() })
            .unwrap();
        let err_before = crate::metrics::rmse(&noisy, &clean).unwrap();
        let err_after = crate::metrics::rmse(&out, &clean).unwrap();
        assert!(err_after < err_before, "{err_after} !< {err_before}");
    }

    #[test]
    fn nlm_large_h_tends_to_window_mean() {
        // With a huge bandwidth, all window weights approach one and the
        // output approaches a box average.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let f = Array2::from_shape_fn((9, 9), |_| rng.gen_range(0.0..1.0f64));
        let params = NlmParams { window_radius: 1, patch_radius: 1, filtering_h: 1e9 };
        let out = nlm_filter(&f, &params).unwrap();
        // Interior pixel: 3x3 mean.
        let mut mean = 0.0;
        for dr in -1i32..=1 {
            for dc in -1i32..=1 {
                mean += f[[(4 + dr) as usize, (4 + dc) as usize]];
            }
        }
        mean /= 9.0;
        assert!((out[[4, 4]] - mean).abs() < 1e-9);
    }

    #[test]
    fn nlm_rejects_bad_bandwidth() {
        let f = Array2::<f64>::zeros((4, 4));
        let err = nlm_filter(&f, &NlmParams { filtering_h: 0.0, ..NlmParams::default() });
        assert!(err.is_err());
    }

    #[test]
    fn nlm_thread_count_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0.0..1.0f64));
        let params = NlmParams::default();
        let a = nlm_filter(&f, &params).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| nlm_filter(&f, &params).unwrap());
        assert_eq!(a, b);
    }
}
