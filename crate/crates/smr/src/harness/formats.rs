//! On-disk formats: the `SMR1` raw multi-plane container for material
//! maps and sinograms, 16-bit PGM exports for quick viewing, and the
//! convergence CSV.
//!
//! `SMR1` layout (all integers and floats little-endian):
//!
//! ```text
//! bytes 0..4    magic "SMR1"
//! bytes 4..16   three u32 counts: planes, height, width
//! then          planes * height * width f64 values, row-major per plane
//! ```
//!
//! Material maps store (N, J2, J1); sinograms store (M, n_views,
//! n_cells).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::phantom::MaterialMaps;
use crate::solvers::IterationDiagnostics;
use crate::{Result, SmrError};

const MAGIC: &[u8; 4] = b"SMR1";

fn write_raw(path: &Path, planes: &[&Array2<f64>]) -> Result<()> {
    let (h, w) = planes[0].dim();
    for p in planes {
        if p.dim() != (h, w) {
            return Err(SmrError::Shape("raw write: planes differ in shape".into()));
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(planes.len() as u32).to_le_bytes())?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    for p in planes {
        for &v in p.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_raw(path: &Path) -> Result<Vec<Array2<f64>>> {
    let mut input = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    input.read_exact(&mut header).map_err(|_| {
        SmrError::Load(format!("{}: truncated header", path.display()))
    })?;
    if &header[0..4] != MAGIC {
        return Err(SmrError::Load(format!(
            "{}: bad magic {:?} (expected SMR1)",
            path.display(),
            &header[0..4]
        )));
    }
    let u = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (n, h, w) = (u(4), u(8), u(12));
    if n == 0 || h == 0 || w == 0 {
        return Err(SmrError::Load(format!("{}: zero-sized dimensions", path.display())));
    }
    let mut planes = Vec::with_capacity(n);
    let mut buf = vec![0u8; h * w * 8];
    for k in 0..n {
        input.read_exact(&mut buf).map_err(|_| {
            SmrError::Load(format!("{}: truncated at plane {k}", path.display()))
        })?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        planes.push(
            Array2::from_shape_vec((h, w), values)
                .map_err(|e| SmrError::Load(format!("{}: {e}", path.display())))?,
        );
    }
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(SmrError::Load(format!("{}: trailing bytes after data", path.display())));
    }
    Ok(planes)
}

/// Write material maps as an `SMR1` container of N planes (J2 x J1).
pub fn write_maps(path: &Path, maps: &MaterialMaps) -> Result<()> {
    let planes: Vec<&Array2<f64>> = maps.maps.iter().collect();
    write_raw(path, &planes)
}

/// Read material maps from an `SMR1` container. Material names are not
/// stored in the file and default to indexed placeholders.
pub fn read_maps(path: &Path) -> Result<MaterialMaps> {
    let planes = read_raw(path)?;
    let mut maps = MaterialMaps::zeros(planes.len(), planes[0].dim().1, planes[0].dim().0);
    maps.maps = planes;
    Ok(maps)
}

/// Write a multi-bin sinogram (M x L, ray index = view * n_cells + cell)
/// as an `SMR1` container of M planes (n_views x n_cells).
pub fn write_sinogram(path: &Path, q_bar: &Array2<f64>, n_views: usize, n_cells: usize) -> Result<()> {
    let (m, l) = q_bar.dim();
    if l != n_views * n_cells {
        return Err(SmrError::Shape(format!(
            "sinogram has {l} rays, expected {n_views} x {n_cells}"
        )));
    }
    let planes: Vec<Array2<f64>> = (0..m)
        .map(|b| {
            Array2::from_shape_fn((n_views, n_cells), |(v, c)| q_bar[[b, v * n_cells + c]])
        })
        .collect();
    write_raw(path, &planes.iter().collect::<Vec<_>>())
}

/// Read a multi-bin sinogram; returns (M x L data, n_views, n_cells).
pub fn read_sinogram(path: &Path) -> Result<(Array2<f64>, usize, usize)> {
    let planes = read_raw(path)?;
    let (n_views, n_cells) = planes[0].dim();
    let m = planes.len();
    let mut q = Array2::<f64>::zeros((m, n_views * n_cells));
    for (b, plane) in planes.iter().enumerate() {
        for v in 0..n_views {
            for c in 0..n_cells {
                q[[b, v * n_cells + c]] = plane[[v, c]];
            }
        }
    }
    Ok((q, n_views, n_cells))
}

/// Export one image as a 16-bit binary PGM, mapping the window
/// [level - window/2, level + window/2] onto [0, 65535] with clamping.
/// Rows are flipped so that the image-space +y axis points up on screen.
pub fn write_pgm16(path: &Path, image: &Array2<f64>, window: f64, level: f64) -> Result<()> {
    if window <= 0.0 {
        return Err(SmrError::Config("pgm export: window must be positive".into()));
    }
    let (h, w) = image.dim();
    let lo = level - 0.5 * window;
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{w} {h}\n65535\n")?;
    for r in (0..h).rev() {
        for c in 0..w {
            let t = ((image[[r, c]] - lo) / window).clamp(0.0, 1.0);
            let v = (t * 65535.0).round() as u16;
            out.write_all(&v.to_be_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Write the per-iteration convergence log.
pub fn write_convergence_csv(path: &Path, rows: &[IterationDiagnostics]) -> Result<()> {
    if rows.is_empty() {
        return Err(SmrError::Config("convergence log is empty".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "iteration,material,rmse,psnr,ssim,objective")?;
    for d in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            d.iteration, d.material, d.rmse, d.psnr_db, d.ssim, d.objective
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Write a small key = value manifest describing a run.
pub fn write_manifest(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (k, v) in entries {
        writeln!(out, "{k} = {v}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn maps_round_trip_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("maps.raw");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut maps = MaterialMaps::zeros(3, 7, 5);
        for m in maps.maps.iter_mut() {
            m.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        }
        write_maps(&path, &maps).unwrap();
        let back = read_maps(&path).unwrap();
        assert_eq!(back.maps, maps.maps);
        assert_eq!(back.dims(), (7, 5));
    }

    #[test]
    fn sinogram_round_trip_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("sino.raw");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Array2::from_shape_fn((4, 6 * 9), |_| rng.gen_range(-3.0..0.0));
        write_sinogram(&path, &q, 6, 9).unwrap();
        let (back, views, cells) = read_sinogram(&path).unwrap();
        assert_eq!((views, cells), (6, 9));
        assert_eq!(back, q);
    }

    #[test]
    fn header_layout_is_stable() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.raw");
        let mut maps = MaterialMaps::zeros(1, 2, 1);
        maps.maps[0][[0, 0]] = 1.0;
        maps.maps[0][[0, 1]] = -2.0;
        write_maps(&path, &maps).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"SMR1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes()); // height (J2)
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes()); // width (J1)
        assert_eq!(bytes.len(), 16 + 2 * 8);
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[24..32], &(-2.0f64).to_le_bytes());
    }

    #[test]
    fn bad_magic_and_truncation_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.raw");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_maps(&path).is_err());
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SMR1");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&vec![0u8; 4 * 4 * 8]); // only one plane present
        std::fs::write(&path, &bytes).unwrap();
        let err = read_maps(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("extra.raw");
        let maps = MaterialMaps::zeros(1, 2, 2);
        write_maps(&path, &maps).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_maps(&path).is_err());
    }

    #[test]
    fn pgm_export_windows_and_flips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut img = Array2::<f64>::zeros((2, 2));
        img[[0, 0]] = 0.0; // bottom-left in image space
        img[[1, 1]] = 1.0; // top-right
        write_pgm16(&path, &img, 1.0, 0.5).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes.windows(6).position(|w| w == b"65535\n").unwrap() + 6;
        let px: Vec<u16> = bytes[header_end..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        // Row order flipped: first written row is image row 1.
        assert_eq!(px, vec![0, 65535, 0, 0]);
    }

    #[test]
    fn convergence_csv_layout() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("conv.csv");
        let rows = vec![IterationDiagnostics {
            iteration: 1,
            material: "water".into(),
            rmse: 0.25,
            psnr_db: 12.0,
            ssim: 0.5,
            objective: 3.5,
        }];
        write_convergence_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iteration,material,rmse,psnr,ssim,objective");
        assert_eq!(lines.next().unwrap(), "1,water,0.25,12,0.5,3.5");
        assert!(write_convergence_csv(&path, &[]).is_err());
    }
}
