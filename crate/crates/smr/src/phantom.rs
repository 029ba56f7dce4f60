//! Procedural multi-material test phantoms and a loader for user-supplied
//! material maps.

use std::path::Path;

use ndarray::Array2;

use crate::{Result, SmrError};

/// Stack of per-material fraction images (each J2 x J1, unitless).
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialMaps {
    pub material_names: Vec<String>,
    pub maps: Vec<Array2<f64>>,
}

impl MaterialMaps {
    pub fn zeros(n_materials: usize, j1: usize, j2: usize) -> Self {
        Self {
            material_names: (0..n_materials).map(|n| format!("material{n}")).collect(),
            maps: vec![Array2::zeros((j2, j1)); n_materials],
        }
    }

    pub fn n_materials(&self) -> usize {
        self.maps.len()
    }

    /// (J1, J2) = (width, height).
    pub fn dims(&self) -> (usize, usize) {
        let (j2, j1) = self.maps[0].dim();
        (j1, j2)
    }

    pub fn validate_nonnegative(&self) -> Result<()> {
        for (n, map) in self.maps.iter().enumerate() {
            if map.iter().any(|&v| v < 0.0) {
                return Err(SmrError::Load(format!(
                    "material map {n} contains negative values"
                )));
            }
        }
        Ok(())
    }
}

/// A disk region: center (x, y) in pixel units from the image center
/// (y up), radius in pixels, target material and fraction value.
pub type DiskRegion = ((f64, f64), f64, usize, f64);

/// Build a phantom from a list of disks. Later regions overwrite earlier
/// ones where they overlap: a disk claims its pixels exclusively, zeroing
/// the other materials there.
pub fn make_disk_phantom(
    j1: usize,
    j2: usize,
    n_materials: usize,
    regions: &[DiskRegion],
) -> Result<MaterialMaps> {
    for &(_, radius, mat, fraction) in regions {
        if mat >= n_materials {
            return Err(SmrError::Config(format!(
                "region material index {mat} out of range (N = {n_materials})"
            )));
        }
        if radius <= 0.0 {
            return Err(SmrError::Config("region radius must be positive".into()));
        }
        if fraction < 0.0 {
            return Err(SmrError::Config("region fraction must be nonnegative".into()));
        }
    }
    let mut maps = MaterialMaps::zeros(n_materials, j1, j2);
    for row in 0..j2 {
        for col in 0..j1 {
            let x = col as f64 + 0.5 - 0.5 * j1 as f64;
            let y = row as f64 + 0.5 - 0.5 * j2 as f64;
            for &((cx, cy), radius, mat, fraction) in regions {
                let dx = x - cx;
                let dy = y - cy;
                if dx * dx + dy * dy <= radius * radius {
                    for n in 0..n_materials {
                        maps.maps[n][[row, col]] = if n == mat { fraction } else { 0.0 };
                    }
                }
            }
        }
    }
    Ok(maps)
}

/// Default desk-scale phantom: bone annulus, water interior with two
/// low-density lung ellipses, three iodine disks of decreasing contrast
/// (0.012 / 0.008 / 0.004) embedded in the water region.
///
/// Material order: bone, water, iodine.
pub fn default_phantom(j1: usize, j2: usize) -> MaterialMaps {
    let mut maps = MaterialMaps::zeros(3, j1, j2);
    maps.material_names = vec!["bone".into(), "water".into(), "iodine".into()];
    let s = 0.5 * j1.min(j2) as f64;
    let (r_outer, r_inner) = (0.88 * s, 0.78 * s);
    let lungs = [(-0.34 * s, 0.18 * s, 0.26 * s, 0.38 * s), (0.34 * s, 0.18 * s, 0.26 * s, 0.38 * s)];
    let iodine = [
        (0.0, -0.42 * s, 0.09 * s, 0.012),
        (-0.30 * s, -0.42 * s, 0.09 * s, 0.008),
        (0.30 * s, -0.42 * s, 0.09 * s, 0.004),
    ];
    for row in 0..j2 {
        for col in 0..j1 {
            let x = col as f64 + 0.5 - 0.5 * j1 as f64;
            let y = row as f64 + 0.5 - 0.5 * j2 as f64;
            let r2 = x * x + y * y;
            if r2 > r_outer * r_outer {
                continue;
            }
            if r2 > r_inner * r_inner {
                maps.maps[0][[row, col]] = 1.0;
                continue;
            }
            let mut water = 1.0;
            for &(cx, cy, ax, ay) in &lungs {
                let ex = (x - cx) / ax;
                let ey = (y - cy) / ay;
                if ex * ex + ey * ey <= 1.0 {
                    water = 0.3;
                }
            }
            maps.maps[1][[row, col]] = water;
            for &(cx, cy, r, frac) in &iodine {
                let dx = x - cx;
                let dy = y - cy;
                if dx * dx + dy * dy <= r * r {
                    maps.maps[2][[row, col]] = frac;
                }
            }
        }
    }
    maps
}

/// Load material maps from the raw multi-plane image format, validating
/// dimensions and nonnegativity.
pub fn load_maps(path: &Path, n_materials: usize, j1: usize, j2: usize) -> Result<MaterialMaps> {
    let maps = crate::harness::formats::read_maps(path)?;
    if maps.n_materials() != n_materials || maps.dims() != (j1, j2) {
        return Err(SmrError::Load(format!(
            "{}: got {} planes of {:?}, expected {n_materials} planes of ({j1}, {j2})",
            path.display(),
            maps.n_materials(),
            maps.dims()
        )));
    }
    maps.validate_nonnegative()?;
    Ok(maps)
}
