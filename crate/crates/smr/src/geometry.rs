//! Fan-beam scan geometry, the sparse system matrix, forward/back
//! projection and a filtered-backprojection baseline.
//!
//! The system matrix stores exact pixel intersection lengths (Siddon-style
//! grid traversal), one sparse row per ray. Rays are indexed
//! `view * n_detector_cells + cell`.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;

use crate::{Result, SmrError};

/// Ray chunk size for the deterministic back-projection reduction.
/// Partial images are produced per chunk and summed in chunk order, so the
/// result does not depend on the number of worker threads.
const BACKPROJECT_CHUNK: usize = 4096;

/// Fan-beam scan geometry with a flat equispaced detector.
#[derive(Debug, Clone)]
pub struct ScanGeometry {
    pub source_to_detector_mm: f64,
    pub source_to_center_mm: f64,
    pub n_detector_cells: usize,
    pub cell_pitch_mm: f64,
    pub n_views: usize,
    /// View angles in radians, uniformly spaced on [0, 2pi).
    pub view_angles: Vec<f64>,
    pub image_width: usize,
    pub image_height: usize,
    pub pixel_pitch_mm: f64,
}

impl ScanGeometry {
    pub fn new(
        source_to_detector_mm: f64,
        source_to_center_mm: f64,
        n_detector_cells: usize,
        cell_pitch_mm: f64,
        n_views: usize,
        image_width: usize,
        image_height: usize,
        pixel_pitch_mm: f64,
    ) -> Result<Self> {
        let check_pos = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SmrError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        check_pos("source_to_detector_mm", source_to_detector_mm)?;
        check_pos("source_to_center_mm", source_to_center_mm)?;
        check_pos("cell_pitch_mm", cell_pitch_mm)?;
        check_pos("pixel_pitch_mm", pixel_pitch_mm)?;
        if source_to_detector_mm <= source_to_center_mm {
            return Err(SmrError::Config(format!(
                "source_to_detector_mm ({source_to_detector_mm}) must exceed source_to_center_mm ({source_to_center_mm})"
            )));
        }
        for (name, v) in [
            ("n_detector_cells", n_detector_cells),
            ("n_views", n_views),
            ("image_width", image_width),
            ("image_height", image_height),
        ] {
            if v < 1 {
                return Err(SmrError::Config(format!("{name} must be >= 1")));
            }
        }
        let view_angles = (0..n_views)
            .map(|v| 2.0 * std::f64::consts::PI * v as f64 / n_views as f64)
            .collect();
        Ok(Self {
            source_to_detector_mm,
            source_to_center_mm,
            n_detector_cells,
            cell_pitch_mm,
            n_views,
            view_angles,
            image_width,
            image_height,
            pixel_pitch_mm,
        })
    }

    /// Total ray count L = n_views * n_detector_cells.
    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_detector_cells
    }

    /// Total pixel count J = J1 * J2.
    pub fn n_pixels(&self) -> usize {
        self.image_width * self.image_height
    }

    /// Radius of the field of view determined by the fan half-angle.
    pub fn fov_radius_mm(&self) -> f64 {
        let half_det = 0.5 * self.n_detector_cells as f64 * self.cell_pitch_mm;
        let half_fan = (half_det / self.source_to_detector_mm).atan();
        self.source_to_center_mm * half_fan.sin()
    }

    /// Source position for a view angle.
    fn source(&self, beta: f64) -> (f64, f64) {
        (self.source_to_center_mm * beta.cos(), self.source_to_center_mm * beta.sin())
    }

    /// Endpoint of a ray: the center of detector cell `c` for view angle `beta`.
    fn cell_center(&self, beta: f64, c: usize) -> (f64, f64) {
        let (sx, sy) = self.source(beta);
        // Central axis points from the source through the rotation center.
        let (dx, dy) = (-beta.cos(), -beta.sin());
        // Detector axis, perpendicular to the central axis.
        let (ux, uy) = (-beta.sin(), beta.cos());
        let u = (c as f64 + 0.5 - 0.5 * self.n_detector_cells as f64) * self.cell_pitch_mm;
        (
            sx + self.source_to_detector_mm * dx + u * ux,
            sy + self.source_to_detector_mm * dy + u * uy,
        )
    }
}

/// Sparse system matrix: one row of (pixel_index, intersection_length_mm)
/// pairs per ray.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    rows: Vec<Vec<(u32, f64)>>,
    n_pixels: usize,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
}

impl SystemMatrix {
    /// Assemble a matrix from explicit rows (mainly for small hand-built
    /// systems in tests and examples).
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>, n_pixels: usize) -> Self {
        let row_sums = rows.iter().map(|r| r.iter().map(|&(_, w)| w).sum()).collect();
        let mut col_sums = vec![0.0; n_pixels];
        for row in &rows {
            for &(j, w) in row {
                col_sums[j as usize] += w;
            }
        }
        Self { rows, n_pixels, row_sums, col_sums }
    }

    /// Per-ray sums of intersection lengths (SART row normalizers).
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    /// Per-pixel sums of intersection lengths (SART column normalizers).
    pub fn col_sums(&self) -> &[f64] {
        &self.col_sums
    }

    pub fn n_rays(&self) -> usize {
        self.rows.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn row(&self, ray: usize) -> &[(u32, f64)] {
        &self.rows[ray]
    }

    /// Sum of intersection lengths of one row (the in-grid path length).
    pub fn row_length_mm(&self, ray: usize) -> f64 {
        self.row_sums[ray]
    }
}

/// Exact intersection lengths of the segment p1->p2 with a centered pixel
/// grid of `nx` x `ny` pixels of pitch `h`. Returns (pixel_index, length).
fn siddon_row(
    p1: (f64, f64),
    p2: (f64, f64),
    nx: usize,
    ny: usize,
    h: f64,
) -> Vec<(u32, f64)> {
    let (x0, y0) = p1;
    let (dx, dy) = (p2.0 - p1.0, p2.1 - p1.1);
    let ray_len = (dx * dx + dy * dy).sqrt();
    if ray_len == 0.0 {
        return Vec::new();
    }
    let xmin = -0.5 * nx as f64 * h;
    let ymin = -0.5 * ny as f64 * h;
    let xmax = -xmin;
    let ymax = -ymin;

    // Clip the parametric range [0,1] against the grid bounding box.
    let mut amin: f64 = 0.0;
    let mut amax: f64 = 1.0;
    if dx != 0.0 {
        let a1 = (xmin - x0) / dx;
        let a2 = (xmax - x0) / dx;
        amin = amin.max(a1.min(a2));
        amax = amax.min(a1.max(a2));
    } else if x0 <= xmin || x0 >= xmax {
        return Vec::new();
    }
    if dy != 0.0 {
        let a1 = (ymin - y0) / dy;
        let a2 = (ymax - y0) / dy;
        amin = amin.max(a1.min(a2));
        amax = amax.min(a1.max(a2));
    } else if y0 <= ymin || y0 >= ymax {
        return Vec::new();
    }
    if amin >= amax {
        return Vec::new();
    }

    // Crossing parameters with x- and y-planes inside (amin, amax).
    let mut alphas = Vec::with_capacity(nx + ny + 2);
    alphas.push(amin);
    if dx != 0.0 {
        for i in 0..=nx {
            let a = (xmin + i as f64 * h - x0) / dx;
            if a > amin && a < amax {
                alphas.push(a);
            }
        }
    }
    if dy != 0.0 {
        for j in 0..=ny {
            let a = (ymin + j as f64 * h - y0) / dy;
            if a > amin && a < amax {
                alphas.push(a);
            }
        }
    }
    alphas.push(amax);
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut row: Vec<(u32, f64)> = Vec::with_capacity(alphas.len());
    for w in alphas.windows(2) {
        let (a0, a1) = (w[0], w[1]);
        if a1 <= a0 {
            continue;
        }
        let amid = 0.5 * (a0 + a1);
        let xm = x0 + amid * dx;
        let ym = y0 + amid * dy;
        let ix = ((xm - xmin) / h).floor() as isize;
        let iy = ((ym - ymin) / h).floor() as isize;
        if ix < 0 || iy < 0 || ix >= nx as isize || iy >= ny as isize {
            continue;
        }
        let idx = (iy as usize * nx + ix as usize) as u32;
        let len = (a1 - a0) * ray_len;
        match row.last_mut() {
            Some(last) if last.0 == idx => last.1 += len,
            _ => row.push((idx, len)),
        }
    }
    row
}

/// Build the sparse system matrix for a geometry. Deterministic: rows are
/// computed independently per ray.
pub fn build_system_matrix(g: &ScanGeometry) -> SystemMatrix {
    let rays: Vec<(f64, usize)> = g
        .view_angles
        .iter()
        .flat_map(|&beta| (0..g.n_detector_cells).map(move |c| (beta, c)))
        .collect();
    let rows: Vec<Vec<(u32, f64)>> = rays
        .par_iter()
        .map(|&(beta, c)| {
            siddon_row(
                g.source(beta),
                g.cell_center(beta, c),
                g.image_width,
                g.image_height,
                g.pixel_pitch_mm,
            )
        })
        .collect();
    SystemMatrix::from_rows(rows, g.n_pixels())
}

/// Forward projection p = A f over all rays.
pub fn forward_project(a: &SystemMatrix, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != a.n_pixels {
        return Err(SmrError::Shape(format!(
            "forward_project: image has {} pixels, expected {}",
            f.len(),
            a.n_pixels
        )));
    }
    Ok(a
        .rows
        .par_iter()
        .map(|row| row.iter().map(|&(j, w)| w * f[j as usize]).sum())
        .collect())
}

/// Back projection A^T p, the exact transpose of [`forward_project`].
///
/// Accumulation is chunk-partitioned with a fixed reduction order, so the
/// output is bit-identical for any thread count.
pub fn back_project(a: &SystemMatrix, p: &[f64]) -> Result<Vec<f64>> {
    if p.len() != a.rows.len() {
        return Err(SmrError::Shape(format!(
            "back_project: sinogram has {} rays, expected {}",
            p.len(),
            a.rows.len()
        )));
    }
    let partials: Vec<Vec<f64>> = a
        .rows
        .par_chunks(BACKPROJECT_CHUNK)
        .zip(p.par_chunks(BACKPROJECT_CHUNK))
        .map(|(rows, ps)| {
            let mut img = vec![0.0; a.n_pixels];
            for (row, &pv) in rows.iter().zip(ps) {
                for &(j, w) in row {
                    img[j as usize] += w * pv;
                }
            }
            img
        })
        .collect();
    let mut out = vec![0.0; a.n_pixels];
    for part in partials {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
    Ok(out)
}

/// Fan-beam filtered backprojection with a ramp filter (rectangular
/// window) and linear detector interpolation. Baseline only.
///
/// `sinogram` is (n_views, n_detector_cells); the result is J2 x J1.
pub fn fbp_reconstruct(g: &ScanGeometry, sinogram: &Array2<f64>) -> Result<Array2<f64>> {
    if sinogram.dim() != (g.n_views, g.n_detector_cells) {
        return Err(SmrError::Shape(format!(
            "fbp_reconstruct: sinogram is {:?}, expected ({}, {})",
            sinogram.dim(),
            g.n_views,
            g.n_detector_cells
        )));
    }
    let nc = g.n_detector_cells;
    let sod = g.source_to_center_mm;
    let sdd = g.source_to_detector_mm;
    // Rescale the detector onto a virtual detector through the rotation
    // center; the standard equispaced fan-beam formulas apply there.
    let dv = g.cell_pitch_mm * sod / sdd;

    // Ramp kernel, rectangular window.
    let mut kernel = vec![0.0; 2 * nc - 1];
    for (i, k) in kernel.iter_mut().enumerate() {
        let n = i as isize - (nc as isize - 1);
        *k = if n == 0 {
            1.0 / (4.0 * dv * dv)
        } else if n % 2 != 0 {
            -1.0 / (std::f64::consts::PI * std::f64::consts::PI * (n * n) as f64 * dv * dv)
        } else {
            0.0
        };
    }

    let filtered: Vec<Vec<f64>> = (0..g.n_views)
        .into_par_iter()
        .map(|v| {
            let mut weighted = vec![0.0; nc];
            for c in 0..nc {
                let s = (c as f64 + 0.5 - 0.5 * nc as f64) * dv;
                weighted[c] = sinogram[[v, c]] * sod / (sod * sod + s * s).sqrt();
            }
            let mut q = vec![0.0; nc];
            for c in 0..nc {
                let mut acc = 0.0;
                for (k, &wv) in weighted.iter().enumerate() {
                    acc += kernel[c + nc - 1 - k] * wv;
                }
                q[c] = acc * dv;
            }
            q
        })
        .collect();

    let dbeta = 2.0 * std::f64::consts::PI / g.n_views as f64;
    let (j1, j2) = (g.image_width, g.image_height);
    let h = g.pixel_pitch_mm;
    let mut out = Array2::<f64>::zeros((j2, j1));
    let rows: Vec<Vec<f64>> = (0..j2)
        .into_par_iter()
        .map(|r| {
            let y = (r as f64 + 0.5) * h - 0.5 * j2 as f64 * h;
            let mut line = vec![0.0; j1];
            for (cpx, px) in line.iter_mut().enumerate() {
                let x = (cpx as f64 + 0.5) * h - 0.5 * j1 as f64 * h;
                let mut acc = 0.0;
                for (v, q) in filtered.iter().enumerate() {
                    let beta = g.view_angles[v];
                    let t = sod - (x * beta.cos() + y * beta.sin());
                    if t <= 0.0 {
                        continue;
                    }
                    let u = -x * beta.sin() + y * beta.cos();
                    let sv = sod * u / t;
                    let pos = sv / dv - 0.5 + 0.5 * nc as f64;
                    if pos < 0.0 || pos > (nc - 1) as f64 {
                        continue;
                    }
                    let i0 = pos.floor() as usize;
                    let i1 = (i0 + 1).min(nc - 1);
                    let frac = pos - i0 as f64;
                    let qi = q[i0] * (1.0 - frac) + q[i1] * frac;
                    let uw = t / sod;
                    acc += qi / (uw * uw);
                }
                // Full 2pi scan covers each ray twice.
                *px = acc * dbeta * 0.5;
            }
            line
        })
        .collect();
    for (r, line) in rows.into_iter().enumerate() {
        for (c, v) in line.into_iter().enumerate() {
            out[[r, c]] = v;
        }
    }
    Ok(out)
}

/// Build a geometry from a key-value map (all values as f64). Used by the
/// config loader and by tests that mirror the config surface.
pub fn build_geometry(config: &BTreeMap<String, f64>) -> Result<ScanGeometry> {
    let get = |key: &str| -> Result<f64> {
        config
            .get(key)
            .copied()
            .ok_or_else(|| SmrError::Config(format!("missing geometry key `{key}`")))
    };
    ScanGeometry::new(
        get("source_to_detector_mm")?,
        get("source_to_center_mm")?,
        get("n_detector_cells")? as usize,
        get("cell_pitch_mm")?,
        get("n_views")? as usize,
        get("image_width")? as usize,
        get("image_height")? as usize,
        get("pixel_pitch_mm")?,
    )
}
