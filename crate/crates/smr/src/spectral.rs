//! Energy sampling, binned normalized spectra, basis attenuation curves,
//! the polychromatic transmission model and Poisson measurement simulation.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::geometry::{forward_project, SystemMatrix};
use crate::phantom::MaterialMaps;
use crate::{Result, SmrError};

/// Exponents below this value contribute nothing to the transmission sum.
const EXP_CLAMP: f64 = -700.0;

/// Ascending energy samples with per-sample integration widths (keV).
#[derive(Debug, Clone)]
pub struct EnergyGrid {
    pub energies_kev: Vec<f64>,
    pub delta_kev: Vec<f64>,
}

impl EnergyGrid {
    pub fn new(energies_kev: Vec<f64>) -> Result<Self> {
        if energies_kev.len() < 2 {
            return Err(SmrError::Load("energy grid needs at least two samples".into()));
        }
        if !energies_kev.windows(2).all(|w| w[1] > w[0]) {
            return Err(SmrError::Load("energy grid must be strictly ascending".into()));
        }
        let n = energies_kev.len();
        let mut delta = vec![0.0; n];
        delta[0] = energies_kev[1] - energies_kev[0];
        delta[n - 1] = energies_kev[n - 1] - energies_kev[n - 2];
        for i in 1..n - 1 {
            delta[i] = 0.5 * (energies_kev[i + 1] - energies_kev[i - 1]);
        }
        Ok(Self { energies_kev, delta_kev: delta })
    }

    pub fn len(&self) -> usize {
        self.energies_kev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies_kev.is_empty()
    }
}

/// Binned normalized spectrum: per-bin weights over the energy grid with
/// each bin integrating to one, plus incident photons per ray per bin.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    pub grid: EnergyGrid,
    pub bin_edges_kev: Vec<f64>,
    /// (M, n_samples); zero outside each bin's energy range.
    pub s: Array2<f64>,
    /// Contiguous sample index range [start, end) of each bin.
    pub bin_ranges: Vec<(usize, usize)>,
    /// Incident photons per ray per bin.
    pub incident_flux: Vec<f64>,
}

impl SpectralModel {
    pub fn n_bins(&self) -> usize {
        self.bin_ranges.len()
    }

    /// Check the per-bin normalization invariant sum_i s_m(E_i) dE_i = 1.
    pub fn normalization_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for m in 0..self.n_bins() {
            let total: f64 = (0..self.grid.len())
                .map(|i| self.s[[m, i]] * self.grid.delta_kev[i])
                .sum();
            worst = worst.max((total - 1.0).abs());
        }
        worst
    }
}

/// Per-material basis attenuation values on an energy grid (1/mm per unit
/// fraction).
#[derive(Debug, Clone)]
pub struct BasisAttenuation {
    pub material_names: Vec<String>,
    /// (N, n_samples), strictly positive.
    pub phi: Array2<f64>,
}

impl BasisAttenuation {
    pub fn n_materials(&self) -> usize {
        self.material_names.len()
    }
}

/// Log-domain multi-bin sinogram (M bins x L rays), the solver input.
#[derive(Debug, Clone)]
pub struct MeasuredProjections {
    pub q_bar: Array2<f64>,
}

fn parse_two_column(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SmrError::Load(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<f64> {
            tok.ok_or_else(|| {
                SmrError::Load(format!("{}:{}: expected two columns", path.display(), lineno + 1))
            })?
            .parse::<f64>()
            .map_err(|e| SmrError::Load(format!("{}:{}: {e}", path.display(), lineno + 1)))
        };
        let e = parse(it.next())?;
        let v = parse(it.next())?;
        rows.push((e, v));
    }
    if rows.is_empty() {
        return Err(SmrError::Load(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

/// Load a two-column spectrum table (energy keV, relative weight), restrict
/// it per bin and renormalize so each bin integrates to one.
pub fn load_spectrum(path: &Path, bin_edges_kev: &[f64], incident_flux: &[f64]) -> Result<SpectralModel> {
    let rows = parse_two_column(path)?;
    let energies: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let weights: Vec<f64> = rows.iter().map(|r| r.1).collect();
    if weights.iter().any(|&w| w < 0.0) {
        return Err(SmrError::Load(format!("{}: negative spectrum weight", path.display())));
    }
    let grid = EnergyGrid::new(energies)?;
    build_spectral_model(grid, &weights, bin_edges_kev, incident_flux)
}

/// Assemble a [`SpectralModel`] from in-memory weights on a grid.
pub fn build_spectral_model(
    grid: EnergyGrid,
    weights: &[f64],
    bin_edges_kev: &[f64],
    incident_flux: &[f64],
) -> Result<SpectralModel> {
    if weights.len() != grid.len() {
        return Err(SmrError::Shape("spectrum weights do not match the grid".into()));
    }
    if bin_edges_kev.len() < 2 || !bin_edges_kev.windows(2).all(|w| w[1] > w[0]) {
        return Err(SmrError::Config("bin edges must be ascending with at least one bin".into()));
    }
    let m_bins = bin_edges_kev.len() - 1;
    let emin = grid.energies_kev[0];
    let emax = *grid.energies_kev.last().unwrap();
    if bin_edges_kev[0] < emin - 1e-9 || *bin_edges_kev.last().unwrap() > emax + 1e-9 {
        return Err(SmrError::Config(format!(
            "bin edges [{}, {}] exceed the grid range [{emin}, {emax}]",
            bin_edges_kev[0],
            bin_edges_kev.last().unwrap()
        )));
    }
    if incident_flux.len() != m_bins {
        return Err(SmrError::Config(format!(
            "incident_flux has {} entries, expected {m_bins}",
            incident_flux.len()
        )));
    }
    let n = grid.len();
    let mut s = Array2::<f64>::zeros((m_bins, n));
    let mut bin_ranges = Vec::with_capacity(m_bins);
    for m in 0..m_bins {
        let lo = bin_edges_kev[m];
        let hi = bin_edges_kev[m + 1];
        let last_bin = m == m_bins - 1;
        let in_bin = |e: f64| e >= lo && (e < hi || (last_bin && e <= hi));
        let start = (0..n).find(|&i| in_bin(grid.energies_kev[i]));
        let start = match start {
            Some(i) => i,
            None => return Err(SmrError::Load(format!("bin {m} [{lo}, {hi}) covers no grid sample"))),
        };
        let mut end = start;
        while end < n && in_bin(grid.energies_kev[end]) {
            end += 1;
        }
        let total: f64 = (start..end).map(|i| weights[i] * grid.delta_kev[i]).sum();
        if total <= 0.0 {
            return Err(SmrError::Load(format!("bin {m} [{lo}, {hi}) has zero total weight")));
        }
        for i in start..end {
            s[[m, i]] = weights[i] / total;
        }
        bin_ranges.push((start, end));
    }
    Ok(SpectralModel {
        grid,
        bin_edges_kev: bin_edges_kev.to_vec(),
        s,
        bin_ranges,
        incident_flux: incident_flux.to_vec(),
    })
}

/// Log-log linear interpolation of one attenuation table onto a grid.
pub fn load_attenuation_table(path: &Path, grid: &EnergyGrid) -> Result<Vec<f64>> {
    let rows = parse_two_column(path)?;
    if !rows.windows(2).all(|w| w[1].0 > w[0].0) {
        return Err(SmrError::Load(format!("{}: energies must ascend", path.display())));
    }
    if rows.iter().any(|r| r.1 <= 0.0) {
        return Err(SmrError::Load(format!("{}: non-positive attenuation value", path.display())));
    }
    let (tmin, tmax) = (rows[0].0, rows[rows.len() - 1].0);
    let mut out = Vec::with_capacity(grid.len());
    for &e in &grid.energies_kev {
        if e < tmin || e > tmax {
            return Err(SmrError::Load(format!(
                "{}: grid energy {e} keV outside table range [{tmin}, {tmax}]",
                path.display()
            )));
        }
        let hi = rows.partition_point(|r| r.0 < e).min(rows.len() - 1).max(1);
        let (e0, v0) = rows[hi - 1];
        let (e1, v1) = rows[hi];
        let v = if e <= e0 {
            v0
        } else if e >= e1 {
            v1
        } else {
            let t = (e.ln() - e0.ln()) / (e1.ln() - e0.ln());
            (v0.ln() * (1.0 - t) + v1.ln() * t).exp()
        };
        out.push(v);
    }
    Ok(out)
}

/// Load one attenuation table per material.
pub fn load_basis_attenuation(
    tables: &[(String, std::path::PathBuf)],
    grid: &EnergyGrid,
) -> Result<BasisAttenuation> {
    let mut phi = Array2::<f64>::zeros((tables.len(), grid.len()));
    let mut names = Vec::with_capacity(tables.len());
    for (n, (name, path)) in tables.iter().enumerate() {
        let col = load_attenuation_table(path, grid)?;
        for (i, v) in col.into_iter().enumerate() {
            phi[[n, i]] = v;
        }
        names.push(name.clone());
    }
    Ok(BasisAttenuation { material_names: names, phi })
}

/// Polychromatic transmission fraction of bin `m` for per-material line
/// integrals `p_col`: S = sum_i s_m(E_i) exp(-sum_n phi_n(E_i) p_n) dE_i.
pub fn transmit(model: &SpectralModel, basis: &BasisAttenuation, p_col: &[f64], m: usize) -> f64 {
    let (start, end) = model.bin_ranges[m];
    let mut total = 0.0;
    for i in start..end {
        let mut att = 0.0;
        for (n, &p) in p_col.iter().enumerate() {
            att += basis.phi[[n, i]] * p;
        }
        if -att > EXP_CLAMP {
            total += model.s[[m, i]] * model.grid.delta_kev[i] * (-att).exp();
        }
    }
    total
}

/// Log-domain forward model Q = ln S over every (bin, ray).
pub fn log_forward(
    model: &SpectralModel,
    basis: &BasisAttenuation,
    p: &Array2<f64>,
) -> Result<Array2<f64>> {
    let (n_mat, l) = p.dim();
    if n_mat != basis.n_materials() {
        return Err(SmrError::Shape(format!(
            "log_forward: P has {n_mat} materials, basis has {}",
            basis.n_materials()
        )));
    }
    let m_bins = model.n_bins();
    let cols: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|ray| {
            let p_col: Vec<f64> = (0..n_mat).map(|n| p[[n, ray]]).collect();
            (0..m_bins).map(|m| transmit(model, basis, &p_col, m).ln()).collect()
        })
        .collect();
    let mut q = Array2::<f64>::zeros((m_bins, l));
    for (ray, col) in cols.iter().enumerate() {
        for m in 0..m_bins {
            q[[m, ray]] = col[m];
        }
    }
    Ok(q)
}

/// Mix a base seed with a (bin, ray) pair into an independent substream
/// seed (splitmix64 finalizer).
fn substream_seed(seed: u64, m: usize, ray: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(1 + ray as u64))
        .wrapping_add((m as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Simulate log-domain multi-bin measurements of a phantom.
///
/// With `noise` enabled, per-(bin, ray) photon counts are drawn from
/// Poisson(I0_m * S_ml) on an independent counter-based substream, so the
/// result is bit-reproducible for a fixed seed regardless of thread count.
/// Zero counts are clamped to one photon before the logarithm.
pub fn simulate_measurements(
    maps: &MaterialMaps,
    a: &SystemMatrix,
    model: &SpectralModel,
    basis: &BasisAttenuation,
    seed: u64,
    noise: bool,
) -> Result<MeasuredProjections> {
    if maps.n_materials() != basis.n_materials() {
        return Err(SmrError::Shape(format!(
            "simulate: phantom has {} materials, basis has {}",
            maps.n_materials(),
            basis.n_materials()
        )));
    }
    let n_mat = maps.n_materials();
    let l = a.n_rays();
    let mut p_true = Array2::<f64>::zeros((n_mat, l));
    for n in 0..n_mat {
        let flat = maps.maps[n].as_slice().expect("contiguous map");
        let pn = forward_project(a, flat)?;
        for (ray, v) in pn.into_iter().enumerate() {
            p_true[[n, ray]] = v;
        }
    }
    if !noise {
        let q = log_forward(model, basis, &p_true)?;
        return Ok(MeasuredProjections { q_bar: q });
    }
    let m_bins = model.n_bins();
    let cols: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|ray| {
            let p_col: Vec<f64> = (0..n_mat).map(|n| p_true[[n, ray]]).collect();
            (0..m_bins)
                .map(|m| {
                    let i0 = model.incident_flux[m];
                    let mean = i0 * transmit(model, basis, &p_col, m);
                    let counts = if mean <= 0.0 {
                        0.0
                    } else {
                        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, m, ray));
                        Poisson::new(mean).expect("positive mean").sample(&mut rng)
                    };
                    (counts.max(1.0) / i0).ln()
                })
                .collect()
        })
        .collect();
    let mut q = Array2::<f64>::zeros((m_bins, l));
    for (ray, col) in cols.iter().enumerate() {
        for m in 0..m_bins {
            q[[m, ray]] = col[m];
        }
    }
    Ok(MeasuredProjections { q_bar: q })
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use std::io::Write;

    fn data_path(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
    }

    #[test]
    fn load_default_spectrum_eight_bins() {
        let edges = [16.0, 22.0, 25.0, 28.0, 31.0, 34.0, 37.0, 41.0, 50.0];
        let flux = vec![1e5; 8];
        let model = load_spectrum(&data_path("spectrum_50kvp.txt"), &edges, &flux).unwrap();
        assert_eq!(model.n_bins(), 8);
        assert_eq!(model.grid.len(), 341);
        assert!(model.normalization_defect() < 1e-12);
    }

    #[test]
    fn load_spectrum_four_bin_scanner_channels() {
        // Wider channelization; grid must cover the edges, so build a flat
        // table spanning 13-137 keV.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# energy_keV weight").unwrap();
        for i in 0..249 {
            writeln!(f, "{} 1.0", 13.0 + 0.5 * i as f64).unwrap();
        }
        let edges = [13.0, 25.0, 33.0, 48.0, 137.0];
        let model = load_spectrum(&path, &edges, &[1e5; 4]).unwrap();
        assert_eq!(model.n_bins(), 4);
        assert!(model.normalization_defect() < 1e-12);
    }

    #[test]
    fn flat_single_bin_is_uniform_density() {
        let model = flat_model(10.0, 20.0, 101, &[10.0, 20.0]);
        // s constant = 1 / (Emax - Emin) up to the end-width convention.
        let mid = model.s[[0, 50]];
        assert!((mid - 0.1).abs() < 0.01, "s mid = {mid}");
        assert!(model.normalization_defect() < 1e-12);
    }

    #[test]
    fn zero_weight_bin_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spiky.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        for i in 0..41 {
            let e = 10.0 + i as f64;
            let w = if e < 30.0 { 1.0 } else { 0.0 };
            writeln!(f, "{e} {w}").unwrap();
        }
        let err = load_spectrum(&path, &[10.0, 30.0, 50.0], &[1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("zero total weight"));
    }

    #[test]
    fn iodine_k_edge_visible_on_grid() {
        let edges = [16.0, 22.0, 25.0, 28.0, 31.0, 34.0, 37.0, 41.0, 50.0];
        let model = load_spectrum(&data_path("spectrum_50kvp.txt"), &edges, &[1e5; 8]).unwrap();
        let phi = load_attenuation_table(&data_path("attenuation_iodine.txt"), &model.grid).unwrap();
        // Largest jump between adjacent samples sits at the K-edge.
        let mut best = (0usize, 0.0f64);
        for i in 1..phi.len() {
            let jump = phi[i] / phi[i - 1];
            if jump > best.1 {
                best = (i, jump);
            }
        }
        let e = model.grid.energies_kev[best.0];
        assert!(best.1 > 3.0, "jump ratio {}", best.1);
        assert!((e - 33.2).abs() < 0.2, "edge at {e} keV");
    }

    #[test]
    fn constant_table_interpolates_constant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("const.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        for i in 0..11 {
            writeln!(f, "{} 0.25", 10.0 + 5.0 * i as f64).unwrap();
        }
        let grid = EnergyGrid::new((0..21).map(|i| 12.0 + 2.0 * i as f64).collect()).unwrap();
        let phi = load_attenuation_table(&path, &grid).unwrap();
        assert!(phi.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn table_node_is_exact() {
        let grid = EnergyGrid::new(vec![10.0, 20.0, 30.0]).unwrap();
        let phi = load_attenuation_table(&data_path("attenuation_water.txt"), &grid).unwrap();
        // 20 keV is a table node.
        let expected = 498.0 / (20.0f64.powi(3)) + 0.0187;
        assert!((phi[1] - expected).abs() / expected < 1e-6);
    }

    #[test]
    fn transmit_zero_path_is_one() {
        let model = flat_model(10.0, 50.0, 81, &[10.0, 30.0, 50.0]);
        let basis = synthetic_basis(&model, 2);
        for m in 0..2 {
            let s = transmit(&model, &basis, &[0.0, 0.0], m);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transmit_monoenergetic_beer_lambert() {
        // Single sample in the bin: delta weight collapses to exp(-phi p).
        let grid = EnergyGrid::new(vec![19.0, 20.0, 21.0]).unwrap();
        let weights = vec![0.0, 1.0, 0.0];
        let model = build_spectral_model(grid, &weights, &[19.5, 20.5], &[1.0]).unwrap();
        let basis = synthetic_basis(&model, 1);
        let phi = basis.phi[[0, 1]];
        for &p in &[0.0, 0.7, 3.1] {
            let s = transmit(&model, &basis, &[p], 0);
            assert!((s - (-phi * p).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn transmit_matches_direct_summation() {
        // Two materials, three samples, hand-chosen values.
        let grid = EnergyGrid::new(vec![10.0, 11.0, 12.0]).unwrap();
        let weights = vec![2.0, 3.0, 1.0];
        let model = build_spectral_model(grid.clone(), &weights, &[10.0, 12.0], &[1.0]).unwrap();
        let mut phi = Array2::<f64>::zeros((2, 3));
        phi[[0, 0]] = 0.11;
        phi[[0, 1]] = 0.09;
        phi[[0, 2]] = 0.08;
        phi[[1, 0]] = 0.30;
        phi[[1, 1]] = 0.25;
        phi[[1, 2]] = 0.21;
        let basis = BasisAttenuation { material_names: vec!["a".into(), "b".into()], phi };
        let p = [2.0, 0.5];
        // Independent summation with explicit normalization.
        let total_w = 2.0 + 3.0 + 1.0; // uniform unit widths
        let mut expected = 0.0;
        for i in 0..3 {
            let att = basis.phi[[0, i]] * p[0] + basis.phi[[1, i]] * p[1];
            expected += weights[i] / total_w * (-att).exp();
        }
        let s = transmit(&model, &basis, &p, 0);
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
    }

    #[test]
    fn transmit_monotone_in_each_material() {
        let model = flat_model(16.0, 50.0, 101, &[16.0, 30.0, 50.0]);
        let basis = synthetic_basis(&model, 2);
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = [rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)];
            let m = rng.gen_range(0..2);
            let base = transmit(&model, &basis, &p, m);
            let n = rng.gen_range(0..2);
            let mut p2 = p;
            p2[n] += rng.gen_range(0.0..1.0);
            assert!(transmit(&model, &basis, &p2, m) <= base);
        }
    }

    #[test]
    fn log_forward_zero_p_is_zero() {
        let model = flat_model(16.0, 50.0, 35, &[16.0, 33.0, 50.0]);
        let basis = synthetic_basis(&model, 2);
        let p = Array2::<f64>::zeros((2, 7));
        let q = log_forward(&model, &basis, &p).unwrap();
        assert!(q.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn simulate_noiseless_matches_log_forward() {
        use crate::geometry::{build_system_matrix, ScanGeometry};
        use crate::phantom::make_disk_phantom;
        let g = ScanGeometry::new(60.0, 40.0, 32, 1.0, 24, 16, 16, 1.0).unwrap();
        let a = build_system_matrix(&g);
        let maps = make_disk_phantom(
            16,
            16,
            2,
            &[((0.0, 0.0), 6.0, 0, 1.0), ((2.0, 1.0), 3.0, 1, 0.5)],
        )
        .unwrap();
        let model = flat_model(16.0, 50.0, 69, &[16.0, 33.0, 50.0]);
        let basis = synthetic_basis(&model, 2);
        let meas = simulate_measurements(&maps, &a, &model, &basis, 0, false).unwrap();
        // Composition identity: noiseless simulate == log_forward(A maps).
        let mut p_true = Array2::<f64>::zeros((2, g.n_rays()));
        for n in 0..2 {
            let pn = forward_project(&a, maps.maps[n].as_slice().unwrap()).unwrap();
            for (ray, v) in pn.into_iter().enumerate() {
                p_true[[n, ray]] = v;
            }
        }
        let q = log_forward(&model, &basis, &p_true).unwrap();
        assert_eq!(meas.q_bar, q);
        assert!(meas.q_bar.iter().all(|&v| v <= 1e-15));
    }

    #[test]
    fn simulate_zero_phantom_noiseless_zero() {
        use crate::geometry::{build_system_matrix, ScanGeometry};
        use crate::phantom::make_disk_phantom;
        let g = ScanGeometry::new(60.0, 40.0, 16, 1.0, 8, 8, 8, 1.0).unwrap();
        let a = build_system_matrix(&g);
        let maps = make_disk_phantom(8, 8, 1, &[]).unwrap();
        let model = flat_model(16.0, 50.0, 35, &[16.0, 50.0]);
        let basis = synthetic_basis(&model, 1);
        let meas = simulate_measurements(&maps, &a, &model, &basis, 0, false).unwrap();
        // ln of the unit-normalized spectrum integral: zero up to the
        // rounding of the normalization sum itself.
        assert!(meas.q_bar.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn poisson_moments_and_reproducibility() {
        // Empirical variance of repeated draws for one ray approximates the
        // Poisson mean within 5%.
        use rand::Rng;
        let mean = 1.0e5 * 0.37;
        let mut seeds = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds.gen());
            let x: f64 = Poisson::new(mean).unwrap().sample(&mut rng);
            sum += x;
            sumsq += x * x;
        }
        let m = sum / n as f64;
        let var = sumsq / n as f64 - m * m;
        assert!((m - mean).abs() / mean < 0.05);
        assert!((var - mean).abs() / mean < 0.05, "var {var} vs {mean}");

        // Bit-exact reproducibility of the full simulation path.
        use crate::geometry::{build_system_matrix, ScanGeometry};
        use crate::phantom::make_disk_phantom;
        let g = ScanGeometry::new(60.0, 40.0, 16, 1.0, 8, 8, 8, 1.0).unwrap();
        let a = build_system_matrix(&g);
        let maps = make_disk_phantom(8, 8, 1, &[((0.0, 0.0), 3.0, 0, 1.0)]).unwrap();
        let model = flat_model(16.0, 50.0, 35, &[16.0, 50.0]);
        let basis = synthetic_basis(&model, 1);
        let m1 = simulate_measurements(&maps, &a, &model, &basis, 42, true).unwrap();
        let m2 = simulate_measurements(&maps, &a, &model, &basis, 42, true).unwrap();
        assert_eq!(m1.q_bar, m2.q_bar);
    }
}
