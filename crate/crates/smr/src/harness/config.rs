//! TOML experiment configuration shared by the CLI and the examples.
//!
//! Relative paths inside a config file are resolved against the
//! directory containing the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::geometry::ScanGeometry;
use crate::phantom::{self, MaterialMaps};
use crate::solvers::{Method, SolverConfig};
use crate::spectral::{load_basis_attenuation, load_spectrum, BasisAttenuation, SpectralModel};
use crate::{Result, SmrError};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub source_to_detector_mm: f64,
    pub source_to_center_mm: f64,
    pub n_detector_cells: usize,
    pub cell_pitch_mm: f64,
    pub n_views: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub pixel_pitch_mm: f64,
}

/// Photon budget: one value for all bins or one value per bin.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Flux {
    Uniform(f64),
    PerBin(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub path: PathBuf,
    pub bin_edges_kev: Vec<f64>,
    pub photons_per_ray: Flux,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialsSection {
    pub names: Vec<String>,
    pub attenuation_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskSection {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub material: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    /// "default", "disks" or "file".
    pub kind: String,
    pub path: Option<PathBuf>,
    pub disks: Option<Vec<DiskSection>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub method: String,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub iterations: usize,
    pub gamma: Option<Vec<f64>>,
    pub tau: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub xi: Option<Vec<f64>>,
    #[serde(default = "default_nlm_h_factor")]
    pub nlm_h_factor: f64,
    /// Start the iterative methods from the direct FBP baseline.
    #[serde(default)]
    pub warm_start: bool,
}

fn default_beta1() -> f64 {
    0.2
}
fn default_beta2() -> f64 {
    0.2
}
fn default_lambda() -> f64 {
    0.002
}
fn default_nlm_h_factor() -> f64 {
    10.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise: bool,
    pub geometry: GeometrySection,
    pub spectrum: SpectrumSection,
    pub materials: MaterialsSection,
    pub phantom: PhantomSection,
    pub solver: SolverSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Parse and validate a config file, resolving relative paths against
    /// its parent directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SmrError::Load(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| SmrError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.spectrum.path);
        for p in self.materials.attenuation_paths.iter_mut() {
            resolve(p);
        }
        if let Some(p) = self.phantom.path.as_mut() {
            resolve(p);
        }
        resolve(&mut self.output.dir);
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise && self.seed.is_none() {
            return Err(SmrError::Config("noise = true requires a seed".into()));
        }
        if self.materials.names.len() != self.materials.attenuation_paths.len() {
            return Err(SmrError::Config(format!(
                "{} material names but {} attenuation paths",
                self.materials.names.len(),
                self.materials.attenuation_paths.len()
            )));
        }
        if self.materials.names.is_empty() {
            return Err(SmrError::Config("at least one material is required".into()));
        }
        if !self.spectrum.path.exists() {
            return Err(SmrError::Config(format!(
                "spectrum file not found: {}",
                self.spectrum.path.display()
            )));
        }
        for p in &self.materials.attenuation_paths {
            if !p.exists() {
                return Err(SmrError::Config(format!(
                    "attenuation table not found: {}",
                    p.display()
                )));
            }
        }
        match self.phantom.kind.as_str() {
            "default" => {
                if self.materials.names.len() != 3 {
                    return Err(SmrError::Config(
                        "the default phantom needs exactly 3 materials (bone, water, iodine)"
                            .into(),
                    ));
                }
            }
            "disks" => {
                if self.phantom.disks.as_ref().map_or(true, |d| d.is_empty()) {
                    return Err(SmrError::Config(
                        "phantom.kind = 'disks' requires a nonempty disks list".into(),
                    ));
                }
            }
            "file" => {
                let p = self.phantom.path.as_ref().ok_or_else(|| {
                    SmrError::Config("phantom.kind = 'file' requires phantom.path".into())
                })?;
                if !p.exists() {
                    return Err(SmrError::Config(format!(
                        "phantom file not found: {}",
                        p.display()
                    )));
                }
            }
            other => {
                return Err(SmrError::Config(format!(
                    "unknown phantom kind '{other}' (expected default, disks or file)"
                )));
            }
        }
        if let Flux::PerBin(v) = &self.spectrum.photons_per_ray {
            if v.len() + 1 != self.spectrum.bin_edges_kev.len() {
                return Err(SmrError::Config(format!(
                    "photons_per_ray has {} entries for {} bins",
                    v.len(),
                    self.spectrum.bin_edges_kev.len() - 1
                )));
            }
        }
        Method::parse(&self.solver.method)?;
        Ok(())
    }

    pub fn build_geometry(&self) -> Result<ScanGeometry> {
        let g = &self.geometry;
        ScanGeometry::new(
            g.source_to_detector_mm,
            g.source_to_center_mm,
            g.n_detector_cells,
            g.cell_pitch_mm,
            g.n_views,
            g.image_width,
            g.image_height,
            g.pixel_pitch_mm,
        )
    }

    fn flux_vec(&self) -> Vec<f64> {
        let m = self.spectrum.bin_edges_kev.len() - 1;
        match &self.spectrum.photons_per_ray {
            Flux::Uniform(v) => vec![*v; m],
            Flux::PerBin(v) => v.clone(),
        }
    }

    pub fn build_spectral_model(&self) -> Result<SpectralModel> {
        load_spectrum(&self.spectrum.path, &self.spectrum.bin_edges_kev, &self.flux_vec())
    }

    pub fn build_basis(&self, model: &SpectralModel) -> Result<BasisAttenuation> {
        let pairs: Vec<(String, PathBuf)> = self
            .materials
            .names
            .iter()
            .cloned()
            .zip(self.materials.attenuation_paths.iter().cloned())
            .collect();
        load_basis_attenuation(&pairs, &model.grid)
    }

    pub fn build_phantom(&self) -> Result<MaterialMaps> {
        let (j1, j2) = (self.geometry.image_width, self.geometry.image_height);
        let n = self.materials.names.len();
        let mut maps = match self.phantom.kind.as_str() {
            "default" => phantom::default_phantom(j1, j2),
            "disks" => {
                let regions: Vec<phantom::DiskRegion> = self
                    .phantom
                    .disks
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|d| ((d.cx, d.cy), d.radius, d.material, d.fraction))
                    .collect();
                phantom::make_disk_phantom(j1, j2, n, &regions)?
            }
            "file" => phantom::load_maps(self.phantom.path.as_ref().unwrap(), n, j1, j2)?,
            _ => unreachable!("validated"),
        };
        maps.material_names = self.materials.names.clone();
        Ok(maps)
    }

    pub fn build_solver(&self) -> Result<SolverConfig> {
        let n = self.materials.names.len();
        let s = &self.solver;
        let mut cfg = SolverConfig::new(Method::parse(&s.method)?, n);
        cfg.beta1 = s.beta1;
        cfg.beta2 = s.beta2;
        cfg.lambda = s.lambda;
        cfg.max_iterations = s.iterations;
        cfg.nlm_h_factor = s.nlm_h_factor;
        cfg.warm_start = s.warm_start;
        if let Some(v) = &s.gamma {
            cfg.gamma = v.clone();
        }
        if let Some(v) = &s.tau {
            cfg.tau = v.clone();
        }
        if let Some(v) = &s.sigma {
            cfg.sigma = v.clone();
        }
        if let Some(v) = &s.xi {
            cfg.xi = v.clone();
        }
        cfg.validate(n)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::tempdir;

    fn data_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
    }

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("exp.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn minimal_config() -> String {
        let d = data_dir();
        format!(
            r#"
seed = 7
noise = true

[geometry]
source_to_detector_mm = 1000.0
source_to_center_mm = 500.0
n_detector_cells = 64
cell_pitch_mm = 1.2
n_views = 60
image_width = 32
image_height = 32
pixel_pitch_mm = 1.2

[spectrum]
path = "{spec}"
bin_edges_kev = [16.0, 25.0, 33.5, 50.0]
photons_per_ray = 1e5

[materials]
names = ["bone", "water", "iodine"]
attenuation_paths = ["{bone}", "{water}", "{iodine}"]

[phantom]
kind = "default"

[solver]
method = "msart"
beta2 = 0.001
iterations = 5

[output]
dir = "out"
"#,
            spec = d.join("spectrum_50kvp.txt").display(),
            bone = d.join("attenuation_bone.txt").display(),
            water = d.join("attenuation_water.txt").display(),
            iodine = d.join("attenuation_iodine.txt").display(),
        )
    }

    #[test]
    fn loads_and_builds_everything() {
        let dir = tempdir().unwrap();
        let path = write_config(dir.path(), &minimal_config());
        let cfg = ExperimentConfig::load(&path).unwrap();
        let geom = cfg.build_geometry().unwrap();
        assert_eq!(geom.n_rays(), 60 * 64);
        let model = cfg.build_spectral_model().unwrap();
        assert_eq!(model.n_bins(), 3);
        assert_eq!(model.incident_flux, vec![1e5, 1e5, 1e5]);
        let basis = cfg.build_basis(&model).unwrap();
        assert_eq!(basis.material_names, vec!["bone", "water", "iodine"]);
        let maps = cfg.build_phantom().unwrap();
        assert_eq!(maps.dims(), (32, 32));
        let solver = cfg.build_solver().unwrap();
        assert_eq!(solver.max_iterations, 5);
        // Relative output dir resolves next to the config file.
        assert_eq!(cfg.output.dir, dir.path().join("out"));
    }

    #[test]
    fn noise_without_seed_rejected() {
        let dir = tempdir().unwrap();
        let body = minimal_config().replace("seed = 7\n", "");
        let path = write_config(dir.path(), &body);
        let err = ExperimentConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn unknown_method_rejected_with_valid_set() {
        let dir = tempdir().unwrap();
        let body = minimal_config().replace("method = \"msart\"", "method = \"sart\"");
        let path = write_config(dir.path(), &body);
        let err = ExperimentConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("bmfmr") && err.contains("fbp-direct"), "{err}");
    }

    #[test]
    fn missing_file_rejected() {
        let dir = tempdir().unwrap();
        let body = minimal_config().replace("spectrum_50kvp", "no_such_spectrum");
        let path = write_config(dir.path(), &body);
        let err = ExperimentConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("not found"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempdir().unwrap();
        let body = minimal_config() + "\n[extra]\nfoo = 1\n";
        let path = write_config(dir.path(), &body);
        assert!(ExperimentConfig::load(&path).is_err());
    }

    #[test]
    fn per_bin_flux_length_checked() {
        let dir = tempdir().unwrap();
        let body =
            minimal_config().replace("photons_per_ray = 1e5", "photons_per_ray = [1e5, 2e5]");
        let path = write_config(dir.path(), &body);
        let err = ExperimentConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("photons_per_ray"), "{err}");
    }

    #[test]
    fn disks_phantom_built_from_config() {
        let dir = tempdir().unwrap();
        let body = minimal_config().replace(
            "kind = \"default\"",
            "kind = \"disks\"\ndisks = [{ cx = 0.0, cy = 0.0, radius = 8.0, material = 1, fraction = 1.0 }]",
        );
        let path = write_config(dir.path(), &body);
        let cfg = ExperimentConfig::load(&path).unwrap();
        let maps = cfg.build_phantom().unwrap();
        assert_eq!(maps.maps[1][[16, 16]], 1.0);
        assert_eq!(maps.maps[0][[16, 16]], 0.0);
    }
}
