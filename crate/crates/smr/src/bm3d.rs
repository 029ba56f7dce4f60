//! Block-matching 3D frame: grouped patch transforms used as the sparse
//! analysis/synthesis pair in the frame-regularized reconstruction.
//!
//! The analysis operator gathers similar 8x8 blocks into 3D groups,
//! applies an orthonormal 2D DCT per block and an orthonormal Haar
//! transform across the stack. The synthesis operator inverts both and
//! aggregates overlapping blocks with per-group weights. With no
//! shrinkage the pair reconstructs the image exactly wherever blocks
//! cover it.

use ndarray::Array2;
use rayon::prelude::*;

use crate::{Result, SmrError};

/// Block-matching and transform parameters.
#[derive(Debug, Clone, Copy)]
pub struct Bm3dParams {
    /// Side length of square blocks.
    pub block_size: usize,
    /// Maximum blocks per group; truncated to a power of two.
    pub max_group_size: usize,
    /// Side length of the square search window around each reference.
    pub search_window: usize,
    /// Stride between reference blocks (final row/column always covered).
    pub ref_step: usize,
    /// Maximum squared block distance admitted into a group.
    pub match_threshold: f64,
}

impl Bm3dParams {
    /// Parameters tuned to a noise level: the matching threshold scales
    /// with the expected squared distance between two noisy copies of the
    /// same block, sigma^2 B^2.
    pub fn for_sigma(sigma: f64) -> Self {
        let block_size = 8usize;
        Self {
            block_size,
            max_group_size: 16,
            search_window: 39,
            ref_step: 3,
            match_threshold: 9.0 * sigma * sigma * (block_size * block_size) as f64,
        }
    }
}

impl Default for Bm3dParams {
    fn default() -> Self {
        Self::for_sigma(0.1)
    }
}

/// One group's 3D transform coefficients and where its blocks came from.
#[derive(Debug, Clone)]
pub struct GroupSpectrum {
    /// Top-left corners of the stacked blocks; the reference comes first.
    pub coords: Vec<(usize, usize)>,
    /// Coefficients, block-major: coeffs[k * B * B ..] is slice k of the
    /// Haar-transformed stack.
    pub coeffs: Vec<f64>,
    /// Aggregation weight (set by shrinkage; 1 before).
    pub weight: f64,
    /// Coefficients surviving the last hard threshold.
    pub retained: usize,
}

/// Orthonormal DCT-II matrix of size b x b, row k = basis function k.
fn dct_matrix(b: usize) -> Vec<f64> {
    let mut d = vec![0.0; b * b];
    let norm0 = (1.0 / b as f64).sqrt();
    let norm = (2.0 / b as f64).sqrt();
    for k in 0..b {
        for n in 0..b {
            let c = (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * b) as f64).cos();
            d[k * b + n] = if k == 0 { norm0 } else { norm * c };
        }
    }
    d
}

/// out = D * block * D^T (2D separable transform). `transpose` applies
/// D^T * block * D instead (the inverse, D being orthonormal).
fn dct2d(block: &[f64], d: &[f64], b: usize, inverse: bool) -> Vec<f64> {
    let mut tmp = vec![0.0; b * b];
    let mut out = vec![0.0; b * b];
    // Rows pass.
    for r in 0..b {
        for k in 0..b {
            let mut acc = 0.0;
            for n in 0..b {
                let w = if inverse { d[n * b + k] } else { d[k * b + n] };
                acc += w * block[r * b + n];
            }
            tmp[r * b + k] = acc;
        }
    }
    // Columns pass.
    for c in 0..b {
        for k in 0..b {
            let mut acc = 0.0;
            for n in 0..b {
                let w = if inverse { d[n * b + k] } else { d[k * b + n] };
                acc += w * tmp[n * b + c];
            }
            out[k * b + c] = acc;
        }
    }
    out
}

/// In-place full orthonormal Haar transform along the stack axis.
/// `values` is indexed [slice * stride + offset]; `len` must be a power
/// of two.
fn haar_forward(values: &mut [f64], len: usize, stride: usize, offset: usize) {
    let mut active = len;
    let mut scratch = vec![0.0; len];
    while active > 1 {
        let half = active / 2;
        for i in 0..half {
            let a = values[(2 * i) * stride + offset];
            let b = values[(2 * i + 1) * stride + offset];
            scratch[i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
            scratch[half + i] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
        }
        for (i, v) in scratch[..active].iter().enumerate() {
            values[i * stride + offset] = *v;
        }
        active = half;
    }
}

fn haar_inverse(values: &mut [f64], len: usize, stride: usize, offset: usize) {
    let mut active = 2;
    let mut scratch = vec![0.0; len];
    while active <= len {
        let half = active / 2;
        for i in 0..half {
            let s = values[i * stride + offset];
            let d = values[(half + i) * stride + offset];
            scratch[2 * i] = (s + d) * std::f64::consts::FRAC_1_SQRT_2;
            scratch[2 * i + 1] = (s - d) * std::f64::consts::FRAC_1_SQRT_2;
        }
        for (i, v) in scratch[..active].iter().enumerate() {
            values[i * stride + offset] = *v;
        }
        active *= 2;
    }
}

fn largest_power_of_two_leq(n: usize) -> usize {
    let mut p = 1;
    while p * 2 <= n {
        p *= 2;
    }
    p
}

/// Reference block positions along one axis: stride `step`, with the
/// final valid position appended so the image edge is always covered.
fn reference_positions(extent: usize, block: usize, step: usize) -> Vec<usize> {
    let last = extent - block;
    let mut out: Vec<usize> = (0..=last).step_by(step).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

fn block_distance_sq(f: &Array2<f64>, a: (usize, usize), b: (usize, usize), block: usize) -> f64 {
    let mut total = 0.0;
    for r in 0..block {
        for c in 0..block {
            let d = f[[a.0 + r, a.1 + c]] - f[[b.0 + r, b.1 + c]];
            total += d * d;
        }
    }
    total
}

/// Group similar blocks around every reference position.
///
/// For each reference, candidate top-left corners inside the search
/// window are ranked by squared distance to the reference block
/// (reference first; ties broken in raster order) and the group is
/// truncated to the largest power of two not exceeding
/// `max_group_size`. Candidates beyond `match_threshold` are excluded.
pub fn block_match(f: &Array2<f64>, params: &Bm3dParams) -> Result<Vec<Vec<(usize, usize)>>> {
    let (rows, cols) = f.dim();
    let b = params.block_size;
    if rows < b || cols < b {
        return Err(SmrError::Shape(format!(
            "block_match: image {rows}x{cols} smaller than block {b}"
        )));
    }
    if params.max_group_size == 0 || params.ref_step == 0 {
        return Err(SmrError::Config("block_match: group size and step must be positive".into()));
    }
    let half = params.search_window / 2;
    let refs_r = reference_positions(rows, b, params.ref_step);
    let refs_c = reference_positions(cols, b, params.ref_step);
    let refs: Vec<(usize, usize)> = refs_r
        .iter()
        .flat_map(|&r| refs_c.iter().map(move |&c| (r, c)))
        .collect();
    let groups: Vec<Vec<(usize, usize)>> = refs
        .par_iter()
        .map(|&(rr, rc)| {
            let r_lo = rr.saturating_sub(half);
            let r_hi = (rr + half).min(rows - b);
            let c_lo = rc.saturating_sub(half);
            let c_hi = (rc + half).min(cols - b);
            let mut matches: Vec<(f64, (usize, usize))> = Vec::new();
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    if (r, c) == (rr, rc) {
                        continue;
                    }
                    let d = block_distance_sq(f, (rr, rc), (r, c), b);
                    if d <= params.match_threshold {
                        matches.push((d, (r, c)));
                    }
                }
            }
            matches.sort_by(|a, b| {
                a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
            });
            let keep = largest_power_of_two_leq((matches.len() + 1).min(params.max_group_size));
            let mut group = Vec::with_capacity(keep);
            group.push((rr, rc));
            group.extend(matches.into_iter().take(keep - 1).map(|(_, pos)| pos));
            group
        })
        .collect();
    Ok(groups)
}

/// Forward 3D transform of every group: per-block 2D DCT followed by a
/// Haar transform across the stack.
pub fn analysis(f: &Array2<f64>, groups: &[Vec<(usize, usize)>], block_size: usize) -> Vec<GroupSpectrum> {
    let b = block_size;
    let d = dct_matrix(b);
    groups
        .par_iter()
        .map(|coords| {
            let k = coords.len();
            let mut coeffs = vec![0.0; k * b * b];
            for (slice, &(r0, c0)) in coords.iter().enumerate() {
                let mut block = vec![0.0; b * b];
                for r in 0..b {
                    for c in 0..b {
                        block[r * b + c] = f[[r0 + r, c0 + c]];
                    }
                }
                let t = dct2d(&block, &d, b, false);
                coeffs[slice * b * b..(slice + 1) * b * b].copy_from_slice(&t);
            }
            for offset in 0..b * b {
                haar_forward(&mut coeffs, k, b * b, offset);
            }
            GroupSpectrum { coords: coords.to_vec(), coeffs, weight: 1.0, retained: coeffs_len(k, b) }
        })
        .collect()
}

fn coeffs_len(k: usize, b: usize) -> usize {
    k * b * b
}

/// Hard-threshold a group in place: coefficients with |c| < sqrt(tau) are
/// zeroed. The aggregation weight becomes 1 / (1 + retained). A zero
/// threshold leaves the group untouched with weight one.
pub fn hard_threshold(group: &mut GroupSpectrum, tau: f64) {
    if tau == 0.0 {
        group.weight = 1.0;
        group.retained = group.coeffs.len();
        return;
    }
    let cut = tau.sqrt();
    let mut retained = 0usize;
    for c in group.coeffs.iter_mut() {
        if c.abs() < cut {
            *c = 0.0;
        } else {
            retained += 1;
        }
    }
    group.retained = retained;
    group.weight = 1.0 / (1.0 + retained as f64);
}

/// Inverse 3D transform and weighted aggregation back into an image.
///
/// Every pixel is the weight-averaged value over all blocks covering it.
/// Accumulation runs in a fixed group order, so the output is independent
/// of thread count. Pixels covered by no block keep their value from
/// `fallback`.
pub fn synthesis(
    groups: &[GroupSpectrum],
    dims: (usize, usize),
    block_size: usize,
    fallback: &Array2<f64>,
) -> Result<Array2<f64>> {
    let b = block_size;
    let (rows, cols) = dims;
    if fallback.dim() != dims {
        return Err(SmrError::Shape("synthesis: fallback image has wrong shape".into()));
    }
    let d = dct_matrix(b);
    // Per-group inverse transforms in parallel, deterministic order kept
    // by indexed collection.
    let blocks: Vec<Vec<f64>> = groups
        .par_iter()
        .map(|g| {
            let k = g.coords.len();
            let mut coeffs = g.coeffs.clone();
            for offset in 0..b * b {
                haar_inverse(&mut coeffs, k, b * b, offset);
            }
            let mut out = vec![0.0; k * b * b];
            for slice in 0..k {
                let t = dct2d(&coeffs[slice * b * b..(slice + 1) * b * b], &d, b, true);
                out[slice * b * b..(slice + 1) * b * b].copy_from_slice(&t);
            }
            out
        })
        .collect();
    let mut num = Array2::<f64>::zeros(dims);
    let mut den = Array2::<f64>::zeros(dims);
    for (g, block_vals) in groups.iter().zip(blocks.iter()) {
        for (slice, &(r0, c0)) in g.coords.iter().enumerate() {
            for r in 0..b {
                for c in 0..b {
                    num[[r0 + r, c0 + c]] += g.weight * block_vals[slice * b * b + r * b + c];
                    den[[r0 + r, c0 + c]] += g.weight;
                }
            }
        }
    }
    let mut out = Array2::<f64>::zeros(dims);
    for r in 0..rows {
        for c in 0..cols {
            out[[r, c]] = if den[[r, c]] > 0.0 { num[[r, c]] / den[[r, c]] } else { fallback[[r, c]] };
        }
    }
    Ok(out)
}

/// Full shrinkage pass: match blocks on `f`, transform, hard-threshold at
/// `tau`, and synthesize. Returns the denoised image together with the
/// total retained-coefficient count (the sparsity term of the frame
/// objective).
pub fn shrink(f: &Array2<f64>, tau: f64, params: &Bm3dParams) -> Result<(Array2<f64>, usize)> {
    let groups = block_match(f, params)?;
    let mut spectra = analysis(f, &groups, params.block_size);
    for g in spectra.iter_mut() {
        hard_threshold(g, tau);
    }
    let retained = spectra.iter().map(|g| g.retained).sum();
    let out = synthesis(&spectra, f.dim(), params.block_size, f)?;
    Ok((out, retained))
}

/// Robust noise estimate: median absolute deviation of the finest-scale
/// diagonal Haar detail coefficients, scaled by 1/0.6745.
pub fn estimate_sigma(f: &Array2<f64>) -> Result<f64> {
    let (rows, cols) = f.dim();
    if rows < 2 || cols < 2 {
        return Err(SmrError::Shape("estimate_sigma: image smaller than 2x2".into()));
    }
    let mut details = Vec::with_capacity((rows / 2) * (cols / 2));
    for r in (0..rows - 1).step_by(2) {
        for c in (0..cols - 1).step_by(2) {
            let hh = 0.5
                * (f[[r, c]] - f[[r, c + 1]] - f[[r + 1, c]] + f[[r + 1, c + 1]]);
            details.push(hh.abs());
        }
    }
    details.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = details.len();
    let median = if n % 2 == 1 {
        details[n / 2]
    } else {
        0.5 * (details[n / 2 - 1] + details[n / 2])
    };
    Ok(median / 0.6745)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0f64))
    }

    #[test]
    fn dct_matrix_is_orthonormal() {
        let b = 8;
        let d = dct_matrix(b);
        for i in 0..b {
            for j in 0..b {
                let dot: f64 = (0..b).map(|k| d[i * b + k] * d[j * b + k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn haar_round_trip_and_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &len in &[1usize, 2, 4, 8, 16] {
            let original: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut v = original.clone();
            haar_forward(&mut v, len, 1, 0);
            let e_in: f64 = original.iter().map(|x| x * x).sum();
            let e_out: f64 = v.iter().map(|x| x * x).sum();
            assert!((e_in - e_out).abs() < 1e-12);
            haar_inverse(&mut v, len, 1, 0);
            for (a, b) in v.iter().zip(original.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_group_has_single_coefficient() {
        // A constant image c: every group stacks identical constant
        // blocks, so the only surviving coefficient is the global DC,
        // c * B * sqrt(K).
        let c = 0.37;
        let f = Array2::from_elem((16, 16), c);
        let params = Bm3dParams { max_group_size: 8, ..Bm3dParams::for_sigma(0.1) };
        let groups = block_match(&f, &params).unwrap();
        let spectra = analysis(&f, &groups, params.block_size);
        for g in &spectra {
            assert_eq!(g.coords.len(), 8);
            let expected_dc = c * 8.0 * (8.0f64).sqrt();
            assert!((g.coeffs[0] - expected_dc).abs() < 1e-10, "{}", g.coeffs[0]);
            for &v in &g.coeffs[1..] {
                assert!(v.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn analysis_preserves_energy() {
        // Orthonormal 3D transform: coefficient energy equals stacked
        // block energy, group by group.
        let f = random_image(24, 24, 5);
        let params = Bm3dParams::for_sigma(10.0);
        let groups = block_match(&f, &params).unwrap();
        let spectra = analysis(&f, &groups, params.block_size);
        for (coords, g) in groups.iter().zip(spectra.iter()) {
            let mut e_blocks = 0.0;
            for &(r0, c0) in coords {
                for r in 0..8 {
                    for c in 0..8 {
                        e_blocks += f[[r0 + r, c0 + c]] * f[[r0 + r, c0 + c]];
                    }
                }
            }
            let e_coeffs: f64 = g.coeffs.iter().map(|x| x * x).sum();
            assert!((e_blocks - e_coeffs).abs() < 1e-10 * e_blocks.max(1.0));
        }
    }

    #[test]
    fn zero_threshold_round_trip_is_identity() {
        let f = random_image(32, 32, 8);
        let (out, _) = shrink(&f, 0.0, &Bm3dParams::for_sigma(10.0)).unwrap();
        for (a, b) in out.iter().zip(f.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn group_sizes_are_powers_of_two() {
        let f = random_image(40, 40, 3);
        let params = Bm3dParams::for_sigma(0.5);
        let groups = block_match(&f, &params).unwrap();
        for g in &groups {
            assert!(g.len().is_power_of_two());
            assert!(g.len() <= params.max_group_size);
        }
    }

    #[test]
    fn edge_blocks_are_covered() {
        // Image size not a multiple of the step: the last row/column of
        // blocks must still appear among the references.
        let f = random_image(21, 27, 4);
        let groups = block_match(&f, &Bm3dParams::for_sigma(10.0)).unwrap();
        let mut covered = Array2::<f64>::zeros((21, 27));
        for g in &groups {
            for &(r0, c0) in g {
                for r in 0..8 {
                    for c in 0..8 {
                        covered[[r0 + r, c0 + c]] = 1.0;
                    }
                }
            }
        }
        assert!(covered.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn matching_does_not_mix_distant_regions() {
        // Two flat plateaus far apart in value: with a tight threshold no
        // group mixes blocks from both plateaus.
        let f = Array2::from_shape_fn((16, 32), |(_, c)| if c < 16 { 0.0 } else { 10.0 });
        let params = Bm3dParams { match_threshold: 1.0, ..Bm3dParams::for_sigma(0.1) };
        let groups = block_match(&f, &params).unwrap();
        let is_flat = |&(r0, c0): &(usize, usize)| {
            let v = f[[r0, c0]];
            (0..8).all(|r| (0..8).all(|c| f[[r0 + r, c0 + c]] == v))
        };
        let mut checked = 0;
        for g in &groups {
            // Blocks straddling the boundary can only group with
            // themselves; flat references must group with equal blocks.
            if !is_flat(&g[0]) {
                continue;
            }
            checked += 1;
            let v = f[[g[0].0, g[0].1]];
            for pos in g {
                assert!(is_flat(pos) && f[[pos.0, pos.1]] == v, "group {g:?} mixes plateaus");
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn hard_threshold_hand_case() {
        let mut g = GroupSpectrum {
            coords: vec![(0, 0)],
            coeffs: vec![0.5, -0.9, 0.2],
            weight: 1.0,
            retained: 3,
        };
        hard_threshold(&mut g, 0.49); // sqrt(tau) = 0.7
        assert_eq!(g.coeffs, vec![0.0, -0.9, 0.0]);
        assert_eq!(g.retained, 1);
        assert!((g.weight - 0.5).abs() < 1e-15);
    }

    #[test]
    fn retained_count_monotone_in_tau() {
        let f = random_image(24, 24, 12);
        let params = Bm3dParams::for_sigma(10.0);
        let mut last = usize::MAX;
        for &tau in &[1e-6, 1e-4, 1e-2, 1.0, 100.0] {
            let (_, retained) = shrink(&f, tau, &params).unwrap();
            assert!(retained <= last);
            last = retained;
        }
    }

    #[test]
    fn shrink_preserves_constant_image() {
        // The DC coefficient dominates any reasonable threshold, so a
        // constant image passes through unchanged.
        let f = Array2::from_elem((20, 20), 0.55);
        let (out, _) = shrink(&f, 0.1, &Bm3dParams::for_sigma(0.1)).unwrap();
        for &v in out.iter() {
            assert!((v - 0.55).abs() < 1e-10);
        }
    }

    #[test]
    fn shrink_denoises_piecewise_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let clean = Array2::from_shape_fn((32, 32), |(r, _)| if r < 16 { 0.2 } else { 0.8 });
        let sigma = 0.05;
        let noisy = &clean
            + &Array2::from_shape_fn((32, 32), |_| {
                rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma
            });
        let params = Bm3dParams::for_sigma(sigma);
        // Threshold around (2.7 sigma)^2 keeps structure, kills noise.
        let tau = (2.7 * sigma) * (2.7 * sigma);
        let (out, _) = shrink(&noisy, tau, &params).unwrap();
        let before = crate::metrics::rmse(&noisy, &clean).unwrap();
        let after = crate::metrics::rmse(&out, &clean).unwrap();
        assert!(after < 0.6 * before, "{after} !< 0.6 * {before}");
    }

    #[test]
    fn shrink_thread_count_invariant() {
        let f = random_image(32, 32, 9);
        let params = Bm3dParams::for_sigma(0.3);
        let (a, _) = shrink(&f, 0.01, &params).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (b, _) = pool.install(|| shrink(&f, 0.01, &params).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn sigma_estimate_on_gaussian_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sigma = 0.1;
        let flat = Array2::from_shape_fn((64, 64), |_| {
            0.5 + rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma
        });
        let est = estimate_sigma(&flat).unwrap();
        assert!((est - sigma).abs() / sigma < 0.15, "estimate {est}");
        // Structure barely perturbs the estimate (edges are sparse in
        // the finest diagonal subband).
        let structured = Array2::from_shape_fn((64, 64), |(r, c)| {
            let base = if (r / 16 + c / 16) % 2 == 0 { 0.0 } else { 1.0 };
            base + flat[[r, c]] - 0.5
        });
        let est2 = estimate_sigma(&structured).unwrap();
        assert!((est2 - sigma).abs() / sigma < 0.25, "estimate {est2}");
    }

    #[test]
    fn sigma_estimate_zero_on_smooth_image() {
        // Bilinear images are annihilated by the 2x2 HH stencil.
        let f = Array2::from_shape_fn((16, 16), |(r, c)| 1.0 + 0.5 * r as f64 + 0.25 * c as f64);
        let est = estimate_sigma(&f).unwrap();
        assert!(est.abs() < 1e-12);
    }
}
