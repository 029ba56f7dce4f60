//! One-step iterative reconstruction of material fraction maps from
//! multi-bin log measurements, plus a direct FBP baseline.
//!
//! Every iterative method alternates the same two stages: a damped
//! regularized Newton update of the decomposed sinogram (projection
//! domain) and a steepest-descent image update per material, after which
//! the decomposed sinogram is resynchronized to the forward projections
//! of the current maps. The methods differ only in the image-domain
//! regularization applied between the descent step and the positivity
//! clamp.

use ndarray::Array2;

use crate::bm3d::{self, Bm3dParams};
use crate::decomposition::{decompose_step, DecomposedSinogram};
use crate::geometry::{back_project, fbp_reconstruct, forward_project, ScanGeometry, SystemMatrix};
use crate::metrics;
use crate::phantom::MaterialMaps;
use crate::regularizers::{nlm_filter, tv_descent_step, NlmParams, TvParams};
use crate::spectral::{BasisAttenuation, SpectralModel};
use crate::{Result, SmrError};

/// Reconstruction method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Msart,
    Tvmr,
    Nlmmr,
    Bmfmr,
    FbpDirect,
}

impl Method {
    pub const NAMES: [&'static str; 5] = ["msart", "tvmr", "nlmmr", "bmfmr", "fbp-direct"];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "msart" => Ok(Self::Msart),
            "tvmr" => Ok(Self::Tvmr),
            "nlmmr" => Ok(Self::Nlmmr),
            "bmfmr" => Ok(Self::Bmfmr),
            "fbp-direct" => Ok(Self::FbpDirect),
            other => Err(SmrError::Config(format!(
                "unknown method '{other}' (expected one of: {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Msart => "msart",
            Self::Tvmr => "tvmr",
            Self::Nlmmr => "nlmmr",
            Self::Bmfmr => "bmfmr",
            Self::FbpDirect => "fbp-direct",
        }
    }
}

/// Solver parameters. Per-material vectors must have one entry per basis
/// material for the methods that use them.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: Method,
    /// Decomposition update damping, in (0, 2).
    pub beta1: f64,
    /// SART relaxation factor for the image update, in (0, 2).
    pub beta2: f64,
    /// Decomposition regularization weight, > 0.
    pub lambda: f64,
    pub max_iterations: usize,
    /// Frame-constraint coupling per material (bmfmr).
    pub gamma: Vec<f64>,
    /// Hard-threshold level per material (bmfmr).
    pub tau: Vec<f64>,
    /// Noise scale per material driving the block-matching threshold
    /// (bmfmr).
    pub sigma: Vec<f64>,
    /// TV strength per material (tvmr).
    pub xi: Vec<f64>,
    /// NLM bandwidth as a multiple of the estimated noise level (nlmmr).
    pub nlm_h_factor: f64,
    /// Record the projection-domain objective each iteration (one extra
    /// linearization pass per ray; off by default).
    pub record_decomposition_objective: bool,
    /// Initialize the iterative methods from the direct FBP baseline
    /// instead of zero maps.
    pub warm_start: bool,
}

impl SolverConfig {
    pub fn new(method: Method, n_materials: usize) -> Self {
        Self {
            method,
            beta1: 0.2,
            beta2: 0.2,
            lambda: 0.002,
            max_iterations: 50,
            gamma: vec![0.01; n_materials],
            tau: vec![0.1; n_materials],
            sigma: vec![0.05; n_materials],
            xi: vec![0.1; n_materials],
            nlm_h_factor: 10.0,
            record_decomposition_objective: false,
            warm_start: false,
        }
    }

    pub fn validate(&self, n_materials: usize) -> Result<()> {
        if !(self.beta1 > 0.0 && self.beta1 < 2.0) {
            return Err(SmrError::Config(format!("beta1 = {} must lie in (0, 2)", self.beta1)));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 2.0) {
            return Err(SmrError::Config(format!("beta2 = {} must lie in (0, 2)", self.beta2)));
        }
        if !(self.lambda > 0.0) {
            return Err(SmrError::Config(format!("lambda = {} must be positive", self.lambda)));
        }
        if self.max_iterations == 0 {
            return Err(SmrError::Config("max_iterations must be at least 1".into()));
        }
        for (name, v) in [
            ("gamma", &self.gamma),
            ("tau", &self.tau),
            ("sigma", &self.sigma),
            ("xi", &self.xi),
        ] {
            if v.len() != n_materials {
                return Err(SmrError::Config(format!(
                    "{name} has {} entries, expected {n_materials}",
                    v.len()
                )));
            }
            if v.iter().any(|&x| x < 0.0) {
                return Err(SmrError::Config(format!("{name} entries must be nonnegative")));
            }
        }
        if !(self.nlm_h_factor > 0.0) {
            return Err(SmrError::Config("nlm_h_factor must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the convergence log: per-iteration, per-material error
/// metrics (NaN without a reference) and the method's objective value.
#[derive(Debug, Clone)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub material: String,
    pub rmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub objective: f64,
}

/// Reconstruction output: final maps plus the per-iteration log.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub maps: MaterialMaps,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// Projection-domain objective per iteration as (before, after)
    /// pairs for that iteration's linearization, present when
    /// `record_decomposition_objective` is set.
    pub decomposition_objectives: Vec<(f64, f64)>,
}

/// Unclamped SART image step f - beta2 Dc^-1 A^T Dr^-1 (A f - p), with
/// Dr and Dc the row and column sums of A. The normalization makes the
/// iteration contractive for any relaxation beta2 in (0, 2). Shared
/// verbatim by every iterative method so that degenerate regularization
/// parameters reproduce the plain method bit for bit.
pub fn sart_image_step(
    a: &SystemMatrix,
    f: &Array2<f64>,
    p_row: &[f64],
    beta2: f64,
) -> Result<Array2<f64>> {
    let flat = f.as_slice().expect("contiguous image");
    let mut residual = forward_project(a, flat)?;
    let row_sums = a.row_sums();
    for (l, r) in residual.iter_mut().enumerate() {
        if row_sums[l] > 0.0 {
            *r = (*r - p_row[l]) / row_sums[l];
        } else {
            *r = 0.0;
        }
    }
    let grad = back_project(a, &residual)?;
    let col_sums = a.col_sums();
    let mut out = f.clone();
    for (j, (o, g)) in out.iter_mut().zip(grad.iter()).enumerate() {
        if col_sums[j] > 0.0 {
            *o -= beta2 * g / col_sums[j];
        }
    }
    Ok(out)
}

/// Clamped image step used by the baseline method.
pub fn msart_image_step(
    a: &SystemMatrix,
    f: &Array2<f64>,
    p_row: &[f64],
    beta2: f64,
) -> Result<Array2<f64>> {
    let mut out = sart_image_step(a, f, p_row, beta2)?;
    out.mapv_inplace(|v| v.max(0.0));
    Ok(out)
}

fn data_fidelity(a: &SystemMatrix, f: &Array2<f64>, p_row: &[f64]) -> Result<f64> {
    let proj = forward_project(a, f.as_slice().expect("contiguous image"))?;
    Ok(proj.iter().zip(p_row.iter()).map(|(&q, &p)| (q - p) * (q - p)).sum())
}

fn p_rows(p: &DecomposedSinogram, n: usize) -> Vec<f64> {
    p.p.row(n).to_vec()
}

fn resync(a: &SystemMatrix, maps: &MaterialMaps, p: &mut DecomposedSinogram) -> Result<()> {
    for n in 0..maps.n_materials() {
        let proj = forward_project(a, maps.maps[n].as_slice().expect("contiguous image"))?;
        for (ray, v) in proj.into_iter().enumerate() {
            p.p[[n, ray]] = v;
        }
    }
    Ok(())
}

fn push_diagnostics(
    log: &mut Vec<IterationDiagnostics>,
    iteration: usize,
    maps: &MaterialMaps,
    reference: Option<&MaterialMaps>,
    objectives: &[f64],
) {
    for n in 0..maps.n_materials() {
        let (rmse, psnr_db, ssim) = match reference {
            Some(r) => {
                let rep = crate::metrics::report(&maps.maps[n], &r.maps[n])
                    .unwrap_or(crate::metrics::MetricsReport {
                        rmse: f64::NAN,
                        psnr_db: f64::NAN,
                        ssim: f64::NAN,
                    });
                (rep.rmse, rep.psnr_db, rep.ssim)
            }
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        log.push(IterationDiagnostics {
            iteration,
            material: maps.material_names[n].clone(),
            rmse,
            psnr_db,
            ssim,
            objective: objectives[n],
        });
    }
}

struct Problem<'a> {
    a: &'a SystemMatrix,
    model: &'a SpectralModel,
    basis: &'a BasisAttenuation,
    q_bar: &'a Array2<f64>,
    j1: usize,
    j2: usize,
}

impl<'a> Problem<'a> {
    fn check(&self) -> Result<()> {
        if self.q_bar.dim() != (self.model.n_bins(), self.a.n_rays()) {
            return Err(SmrError::Shape(format!(
                "measurements have shape {:?}, expected ({}, {})",
                self.q_bar.dim(),
                self.model.n_bins(),
                self.a.n_rays()
            )));
        }
        if self.a.n_pixels() != self.j1 * self.j2 {
            return Err(SmrError::Shape("system matrix does not match the image grid".into()));
        }
        Ok(())
    }
}

/// Generic outer loop: decomposition step, per-material image update via
/// `update`, clamp, resync, diagnostics. `update` receives the material
/// index and the unclamped descent result and returns the regularized
/// image together with any additive objective terms beyond data fidelity.
fn run_iterative<F>(
    prob: &Problem,
    cfg: &SolverConfig,
    names: &[String],
    reference: Option<&MaterialMaps>,
    init: Option<&MaterialMaps>,
    mut update: F,
) -> Result<Reconstruction>
where
    F: FnMut(usize, &Array2<f64>, Array2<f64>) -> Result<(Array2<f64>, f64)>,
{
    prob.check()?;
    let n_mat = prob.basis.n_materials();
    cfg.validate(n_mat)?;
    let mut maps = MaterialMaps::zeros(n_mat, prob.j1, prob.j2);
    maps.material_names = names.to_vec();
    let mut p = DecomposedSinogram::zeros(n_mat, prob.a.n_rays());
    if let Some(start) = init {
        if start.n_materials() != n_mat || start.maps[0].dim() != (prob.j2, prob.j1) {
            return Err(SmrError::Shape("warm start maps do not match the problem".into()));
        }
        for n in 0..n_mat {
            maps.maps[n] = start.maps[n].mapv(|v| v.max(0.0));
        }
        resync(prob.a, &maps, &mut p)?;
    }
    let mut log = Vec::new();
    let mut decomposition_objectives = Vec::new();
    for k in 0..cfg.max_iterations {
        let p_prev = p;
        p = decompose_step(&p_prev, prob.q_bar, prob.model, prob.basis, cfg.beta1, cfg.lambda)?;
        if cfg.record_decomposition_objective {
            let before = metrics::decomposition_objective(
                prob.model,
                prob.basis,
                &p_prev.p,
                &p_prev.p,
                &p_prev.p,
                prob.q_bar,
                cfg.lambda,
            )?;
            let after = metrics::decomposition_objective(
                prob.model,
                prob.basis,
                &p.p,
                &p_prev.p,
                &p_prev.p,
                prob.q_bar,
                cfg.lambda,
            )?;
            decomposition_objectives.push((before, after));
        }
        let mut objectives = vec![0.0; n_mat];
        for n in 0..n_mat {
            let row = p_rows(&p, n);
            let stepped = sart_image_step(prob.a, &maps.maps[n], &row, cfg.beta2)?;
            let (regularized, extra) = update(n, &maps.maps[n], stepped)?;
            maps.maps[n] = regularized;
            objectives[n] = extra;
        }
        for map in maps.maps.iter_mut() {
            map.mapv_inplace(|v| v.max(0.0));
        }
        for n in 0..n_mat {
            objectives[n] += data_fidelity(prob.a, &maps.maps[n], &p_rows(&p, n))?;
        }
        resync(prob.a, &maps, &mut p)?;
        push_diagnostics(&mut log, k + 1, &maps, reference, &objectives);
    }
    Ok(Reconstruction { maps, diagnostics: log, decomposition_objectives })
}

/// Plain one-step reconstruction: decomposition + clamped descent.
pub fn run_msart(
    a: &SystemMatrix,
    model: &SpectralModel,
    basis: &BasisAttenuation,
    q_bar: &Array2<f64>,
    j1: usize,
    j2: usize,
    cfg: &SolverConfig,
    reference: Option<&MaterialMaps>,
    init: Option<&MaterialMaps>,
) -> Result<Reconstruction> {
    let prob = Problem { a, model, basis, q_bar, j1, j2 };
    run_iterative(&prob, cfg, &basis.material_names, reference, init, |_, _, stepped| {
        Ok((stepped, 0.0))
    })
}

/// One-step reconstruction with per-material TV descent after the image
/// update.
pub fn run_tvmr(
    a: &SystemMatrix,
    model: &SpectralModel,
    basis: &BasisAttenuation,
    q_bar: &Array2<f64>,
    j1: usize,
    j2: usize,
    cfg: &SolverConfig,
    reference: Option<&MaterialMaps>,
    init: Option<&MaterialMaps>,
) -> Result<Reconstruction> {
    let prob = Problem { a, model, basis, q_bar, j1, j2 };
    let xi = cfg.xi.clone();
    run_iterative(&prob, cfg, &basis.material_names, reference, init, move |n, _, stepped| {
        let params = TvParams { xi: xi[n], ..TvParams::default() };
        Ok((tv_descent_step(&stepped, &params), 0.0))
    })
}

/// One-step reconstruction with per-material non-local means filtering,
/// bandwidth tied to the current noise estimate.
pub fn run_nlmmr(
    a: &SystemMatrix,
    model: &SpectralModel,
    basis: &BasisAttenuation,
    q_bar: &Array2<f64>,
    j1: usize,
    j2: usize,
    cfg: &SolverConfig,
    reference: Option<&MaterialMaps>,
    init: Option<&MaterialMaps>,
) -> Result<Reconstruction> {
    let prob = Problem { a, model, basis, q_bar, j1, j2 };
    let h_factor = cfg.nlm_h_factor;
    run_iterative(&prob, cfg, &basis.material_names, reference, init, move |_, _, stepped| {
        let sigma = bm3d::estimate_sigma(&stepped)?;
        if sigma <= 0.0 {
            return Ok((stepped, 0.0));
        }
        let params = NlmParams { filtering_h: h_factor * sigma, ..NlmParams::default() };
        let filtered = nlm_filter(&stepped, &params)?;
        Ok((filtered, 0.0))
    })
}

/// Frame-regularized reconstruction: the image step is followed by a
/// proximal pull toward the current sparse frame approximation, the frame
/// is rebuilt by block matching and hard thresholding, and the split
/// variable absorbs the remaining gap.
pub fn run_bmfmr(
    a: &SystemMatrix,
    model: &SpectralModel,
    basis: &BasisAttenuation,
    q_bar: &Array2<f64>,
    j1: usize,
    j2: usize,
    cfg: &SolverConfig,
    reference: Option<&MaterialMaps>,
    init: Option<&MaterialMaps>,
) -> Result<Reconstruction> {
    let prob = Problem { a, model, basis, q_bar, j1, j2 };
    let n_mat = basis.n_materials();
    let mut g: Vec<Array2<f64>> = vec![Array2::zeros((j2, j1)); n_mat];
    let mut t: Vec<Array2<f64>> = vec![Array2::zeros((j2, j1)); n_mat];
    let gamma = cfg.gamma.clone();
    let tau = cfg.tau.clone();
    let sigma = cfg.sigma.clone();
    run_iterative(&prob, cfg, &basis.material_names, reference, init, move |n, f_prev, stepped| {
        // f <- f_half - gamma (f_prev - g - t).
        let mut f_new = stepped;
        ndarray::Zip::from(&mut f_new)
            .and(f_prev)
            .and(&g[n])
            .and(&t[n])
            .for_each(|f, &fp, &gg, &tt| *f -= gamma[n] * (fp - gg - tt));
        // Rebuild the frame approximation from the split point.
        let split = &f_new - &t[n];
        let params = Bm3dParams::for_sigma(sigma[n]);
        let (g_new, retained) = bm3d::shrink(&split, tau[n], &params)?;
        // Penalty evaluated at the split variable that was active during
        // the minimization.
        let gap = &f_new - &g_new - &t[n];
        let penalty: f64 = gap.iter().map(|&v| v * v).sum::<f64>() * gamma[n]
            + tau[n] * retained as f64;
        // Split-variable update absorbs what thresholding removed.
        let t_new = &t[n] - &(&f_new - &g_new);
        g[n] = g_new;
        t[n] = t_new;
        Ok((f_new, penalty))
    })
}

/// Direct baseline: per-bin FBP of the negated log measurements followed
/// by a per-pixel spectral least-squares unmixing.
pub fn run_fbp_direct(
    geom: &ScanGeometry,
    model: &SpectralModel,
    basis: &BasisAttenuation,
    q_bar: &Array2<f64>,
    reference: Option<&MaterialMaps>,
) -> Result<Reconstruction> {
    let m_bins = model.n_bins();
    let n_mat = basis.n_materials();
    let l = geom.n_rays();
    if q_bar.dim() != (m_bins, l) {
        return Err(SmrError::Shape(format!(
            "measurements have shape {:?}, expected ({m_bins}, {l})",
            q_bar.dim()
        )));
    }
    let (j1, j2) = (geom.image_width, geom.image_height);
    // Per-bin effective attenuation images.
    let mut mu = Vec::with_capacity(m_bins);
    for m in 0..m_bins {
        let mut sino = Array2::<f64>::zeros((geom.n_views, geom.n_detector_cells));
        for v in 0..geom.n_views {
            for c in 0..geom.n_detector_cells {
                sino[[v, c]] = -q_bar[[m, v * geom.n_detector_cells + c]];
            }
        }
        mu.push(fbp_reconstruct(geom, &sino)?);
    }
    // Spectral mixing matrix B_mn = sum_i phi_n s_m dE_i.
    let mut b = vec![0.0; m_bins * n_mat];
    for (m, &(start, end)) in model.bin_ranges.iter().enumerate() {
        for i in start..end {
            let w = model.s[[m, i]] * model.grid.delta_kev[i];
            for n in 0..n_mat {
                b[m * n_mat + n] += basis.phi[[n, i]] * w;
            }
        }
    }
    // Normal matrix B^T B with a conditioning check.
    let mut h = vec![0.0; n_mat * n_mat];
    for m in 0..m_bins {
        for i in 0..n_mat {
            for j in 0..n_mat {
                h[i * n_mat + j] += b[m * n_mat + i] * b[m * n_mat + j];
            }
        }
    }
    let trace: f64 = (0..n_mat).map(|i| h[i * n_mat + i]).sum();
    // Cholesky factor of H, reused for every pixel.
    let mut chol = h.clone();
    for j in 0..n_mat {
        for k in 0..j {
            let ljk = chol[j * n_mat + k];
            for i in j..n_mat {
                chol[i * n_mat + j] -= chol[i * n_mat + k] * ljk;
            }
        }
        let d = chol[j * n_mat + j];
        if !(d > 1e-12 * trace.max(f64::MIN_POSITIVE)) {
            return Err(SmrError::Config(
                "fbp-direct: basis materials are spectrally indistinguishable \
                 with this binning (rank-deficient unmixing matrix)"
                    .into(),
            ));
        }
        let root = d.sqrt();
        chol[j * n_mat + j] = root;
        for i in j + 1..n_mat {
            chol[i * n_mat + j] /= root;
        }
    }
    let mut maps = MaterialMaps::zeros(n_mat, j1, j2);
    maps.material_names = basis.material_names.clone();
    for r in 0..j2 {
        for c in 0..j1 {
            let mut rhs = vec![0.0; n_mat];
            for m in 0..m_bins {
                let v = mu[m][[r, c]];
                for n in 0..n_mat {
                    rhs[n] += b[m * n_mat + n] * v;
                }
            }
            // Solve L L^T x = rhs.
            for i in 0..n_mat {
                let mut v = rhs[i];
                for k in 0..i {
                    v -= chol[i * n_mat + k] * rhs[k];
                }
                rhs[i] = v / chol[i * n_mat + i];
            }
            for i in (0..n_mat).rev() {
                let mut v = rhs[i];
                for k in i + 1..n_mat {
                    v -= chol[k * n_mat + i] * rhs[k];
                }
                rhs[i] = v / chol[i * n_mat + i];
            }
            for n in 0..n_mat {
                maps.maps[n][[r, c]] = rhs[n].max(0.0);
            }
        }
    }
    let mut log = Vec::new();
    push_diagnostics(&mut log, 1, &maps, reference, &vec![f64::NAN; n_mat]);
    Ok(Reconstruction { maps, diagnostics: log, decomposition_objectives: Vec::new() })
}

/// Dispatch on the configured method.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    geom: &ScanGeometry,
    a: &SystemMatrix,
    model: &SpectralModel,
    basis: &BasisAttenuation,
    q_bar: &Array2<f64>,
    cfg: &SolverConfig,
    reference: Option<&MaterialMaps>,
) -> Result<Reconstruction> {
    let (j1, j2) = (geom.image_width, geom.image_height);
    if cfg.method == Method::FbpDirect {
        return run_fbp_direct(geom, model, basis, q_bar, reference);
    }
    // Optional warm start from the direct baseline; every iterative
    // method receives the same initial maps.
    let init = if cfg.warm_start {
        Some(run_fbp_direct(geom, model, basis, q_bar, None)?.maps)
    } else {
        None
    };
    let init = init.as_ref();
    match cfg.method {
        Method::Msart => run_msart(a, model, basis, q_bar, j1, j2, cfg, reference, init),
        Method::Tvmr => run_tvmr(a, model, basis, q_bar, j1, j2, cfg, reference, init),
        Method::Nlmmr => run_nlmmr(a, model, basis, q_bar, j1, j2, cfg, reference, init),
        Method::Bmfmr => run_bmfmr(a, model, basis, q_bar, j1, j2, cfg, reference, init),
        Method::FbpDirect => unreachable!(),
    }
}
