//! File formats and run output emission.
//!
//! Binary formats carry one text header line followed by little-endian
//! payloads:
//!
//! * model: `MWI-MODEL nx nz h` then `nz*nx` f32 velocities in m/s,
//!   row-major from shallow to deep (the reader converts to squared
//!   slowness);
//! * shot data: `MWI-DATA ns nf nr` then `nf` f64 frequencies in Hz and
//!   `ns*nf*nr` complex64 samples (f32 real, f32 imaginary) in source,
//!   frequency, receiver order.
//!
//! Model renderings are 8-bit binary graymaps with the velocity scaling
//! recorded in a text sidecar.

pub mod manifest;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{MwiError, Result};
use crate::inversion::{InversionState, IterRecord};
use crate::model::Model;
use crate::sensitivity::ShotData;

const MODEL_MAGIC: &str = "MWI-MODEL";
const DATA_MAGIC: &str = "MWI-DATA";

/// Format a spacing so integral values print without a trailing `.0`.
fn format_h(h: f64) -> String {
    format!("{h}")
}

/// Write a model file; velocities are stored, not squared slownesses.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MODEL_MAGIC} {} {} {}", model.nx, model.nz, format_h(model.h))?;
    for iz in 0..model.nz {
        for ix in 0..model.nx {
            let v = (1.0 / model.m[(iz, ix)].sqrt()) as f32;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a model file. Bounds default to the stored velocity range; callers
/// usually override them from the run configuration.
pub fn load_model(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let parts: Vec<&str> = header.trim().split_whitespace().collect();
    if parts.len() != 4 || parts[0] != MODEL_MAGIC {
        return Err(MwiError::InvalidConfig(format!(
            "{}: expected '{MODEL_MAGIC} nx nz h' header",
            path.display()
        )));
    }
    let nx: usize = parts[1].parse().map_err(|_| bad_header(path, "nx"))?;
    let nz: usize = parts[2].parse().map_err(|_| bad_header(path, "nz"))?;
    let h: f64 = parts[3].parse().map_err(|_| bad_header(path, "h"))?;
    let mut buf = vec![0u8; nz * nx * 4];
    r.read_exact(&mut buf)?;
    let mut m = Array2::zeros((nz, nx));
    for iz in 0..nz {
        for ix in 0..nx {
            let off = (iz * nx + ix) * 4;
            let v = f32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]]) as f64;
            if !(v > 0.0) || !v.is_finite() {
                return Err(MwiError::InvalidModel(format!(
                    "{}: non-positive velocity at ({ix}, {iz})",
                    path.display()
                )));
            }
            m[(iz, ix)] = 1.0 / (v * v);
        }
    }
    let lo = m.iter().cloned().fold(f64::MAX, f64::min);
    let hi = m.iter().cloned().fold(f64::MIN, f64::max);
    Model::new(h, m, lo, hi)
}

fn bad_header(path: &Path, field: &str) -> MwiError {
    MwiError::InvalidConfig(format!("{}: malformed {field} in header", path.display()))
}

/// Write a shot-data cube.
pub fn save_shot_data(data: &ShotData, path: &Path) -> Result<()> {
    let (ns, nf, nr) = data.data.dim();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{DATA_MAGIC} {ns} {nf} {nr}")?;
    for f in &data.frequencies {
        w.write_all(&f.to_le_bytes())?;
    }
    for s in 0..ns {
        for f in 0..nf {
            for r in 0..nr {
                let v = data.data[(s, f, r)];
                w.write_all(&(v.re as f32).to_le_bytes())?;
                w.write_all(&(v.im as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a shot-data cube.
pub fn load_shot_data(path: &Path) -> Result<ShotData> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let parts: Vec<&str> = header.trim().split_whitespace().collect();
    if parts.len() != 4 || parts[0] != DATA_MAGIC {
        return Err(MwiError::InvalidConfig(format!(
            "{}: expected '{DATA_MAGIC} ns nf nr' header",
            path.display()
        )));
    }
    let ns: usize = parts[1].parse().map_err(|_| bad_header(path, "ns"))?;
    let nf: usize = parts[2].parse().map_err(|_| bad_header(path, "nf"))?;
    let nr: usize = parts[3].parse().map_err(|_| bad_header(path, "nr"))?;
    let mut fbuf = vec![0u8; nf * 8];
    r.read_exact(&mut fbuf)?;
    let frequencies: Vec<f64> = (0..nf)
        .map(|i| f64::from_le_bytes(fbuf[i * 8..i * 8 + 8].try_into().unwrap()))
        .collect();
    let mut buf = vec![0u8; ns * nf * nr * 8];
    r.read_exact(&mut buf)?;
    let mut data = Array3::from_elem((ns, nf, nr), Complex64::ZERO);
    let mut off = 0usize;
    for s in 0..ns {
        for f in 0..nf {
            for q in 0..nr {
                let re = f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64;
                let im = f32::from_le_bytes(buf[off + 4..off + 8].try_into().unwrap()) as f64;
                data[(s, f, q)] = Complex64::new(re, im);
                off += 8;
            }
        }
    }
    ShotData::new(data, frequencies)
}

/// Convergence log as CSV with a fixed header; `model_rmse` is blank when
/// no truth model was configured.
pub fn write_convergence_csv(log: &[IterRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iter,e_true,e_multiplier,grad_norm,model_rmse")?;
    for rec in log {
        match rec.model_rmse {
            Some(rmse) => writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},{:.12e}",
                rec.iter, rec.e_true, rec.e_multiplier, rec.grad_norm, rmse
            )?,
            None => writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},",
                rec.iter, rec.e_true, rec.e_multiplier, rec.grad_norm
            )?,
        }
    }
    w.flush()?;
    Ok(())
}

/// 8-bit binary graymap of the velocity model plus a text sidecar holding
/// the scaling.
pub fn write_model_pgm(model: &Model, path: &Path) -> Result<()> {
    let v = model.velocity();
    let lo = v.iter().cloned().fold(f64::MAX, f64::min);
    let hi = v.iter().cloned().fold(f64::MIN, f64::max);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P5")?;
    writeln!(w, "{} {}", model.nx, model.nz)?;
    writeln!(w, "255")?;
    for iz in 0..model.nz {
        for ix in 0..model.nx {
            let g = if hi > lo {
                ((v[(iz, ix)] - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                128
            };
            w.write_all(&[g])?;
        }
    }
    w.flush()?;
    let sidecar = path.with_extension("pgm.txt");
    let mut s = BufWriter::new(File::create(&sidecar)?);
    writeln!(s, "v_min_ms={lo}")?;
    writeln!(s, "v_max_ms={hi}")?;
    writeln!(s, "black=v_min white=v_max")?;
    s.flush()?;
    Ok(())
}

/// Model file, text sidecar with the loop scalars, and the multiplier cube.
pub fn write_checkpoint(
    dir: &Path,
    state: &InversionState,
    mu: f64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let model_path = dir.join("checkpoint_model.bin");
    let mult_path = dir.join("checkpoint_multipliers.bin");
    let meta_path = dir.join("checkpoint.txt");
    save_model(&state.model, &model_path)?;
    save_shot_data(&state.multipliers, &mult_path)?;
    let mut w = BufWriter::new(File::create(&meta_path)?);
    writeln!(w, "k={}", state.k)?;
    writeln!(w, "alpha={:.17e}", state.alpha)?;
    writeln!(w, "mu={mu}")?;
    writeln!(w, "model=checkpoint_model.bin")?;
    writeln!(w, "multipliers=checkpoint_multipliers.bin")?;
    w.flush()?;
    Ok(vec![model_path, mult_path, meta_path])
}

/// Remove files best-effort after a failed emission.
fn cleanup(paths: &[PathBuf]) {
    for p in paths {
        let _ = std::fs::remove_file(p);
    }
}

/// Write the run outputs: final model (binary and graymap), convergence
/// CSV, checkpoint, and one shot-gather cube per selected source. Partial
/// files are removed if any emission fails.
pub fn emit_outputs(
    state: &InversionState,
    man: &manifest::RunManifest,
    acq: &crate::acquisition::Acquisition,
) -> Result<Vec<PathBuf>> {
    let dir = &man.output_dir;
    std::fs::create_dir_all(dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<()> {
        let model_path = dir.join("final_model.bin");
        save_model(&state.model, &model_path)?;
        written.push(model_path);
        let pgm_path = dir.join("final_model.pgm");
        write_model_pgm(&state.model, &pgm_path)?;
        written.push(pgm_path.clone());
        written.push(pgm_path.with_extension("pgm.txt"));
        let csv_path = dir.join("convergence.csv");
        write_convergence_csv(&state.log, &csv_path)?;
        written.push(csv_path);
        written.extend(write_checkpoint(dir, state, man.mu)?);
        for &s in &man.shot_gather_sources {
            if s >= acq.sources.len() {
                return Err(MwiError::InvalidConfig(format!(
                    "shot gather source {s} out of range ({} sources)",
                    acq.sources.len()
                )));
            }
            let single = crate::acquisition::Acquisition {
                sources: vec![acq.sources[s]],
                receivers: acq.receivers.clone(),
                peak_hz: acq.peak_hz,
                frequencies: acq.frequencies.clone(),
            };
            let gather =
                crate::sensitivity::forward_map(&state.model, &single, &man.modeling_options())?;
            let path = dir.join(format!("shot_gather_src{s:03}.bin"));
            save_shot_data(&gather, &path)?;
            written.push(path);
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(written),
        Err(e) => {
            cleanup(&written);
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_camembert, make_two_layer};
    use tempfile::tempdir;

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let model = make_camembert(100.0, 0.4).unwrap();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!((loaded.nx, loaded.nz), (model.nx, model.nz));
        assert_eq!(loaded.h, model.h);
        let path2 = dir.path().join("m2.bin");
        save_model(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn model_header_formats_integral_spacing_bare() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let model = make_camembert(71.0, 0.4).unwrap();
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(&bytes[..header_end], b"MWI-MODEL 68 85 71");
        let two_layer = make_two_layer(35.5).unwrap();
        save_model(&two_layer, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert!(std::str::from_utf8(&bytes[..header_end]).unwrap().ends_with("35.5"));
    }

    #[test]
    fn shot_data_round_trip_is_bit_exact() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut cube = ShotData::zeros(3, vec![4.0, 6.5], 5);
        cube.data
            .mapv_inplace(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_shot_data(&cube, &path).unwrap();
        let loaded = load_shot_data(&path).unwrap();
        assert_eq!(loaded.frequencies, cube.frequencies);
        let path2 = dir.path().join("d2.bin");
        save_shot_data(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn empty_log_gives_header_only_csv() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_convergence_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "iter,e_true,e_multiplier,grad_norm,model_rmse\n");
    }

    #[test]
    fn csv_blank_rmse_without_truth() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let log = vec![IterRecord {
            iter: 0,
            e_true: 1.5,
            e_multiplier: 1.5,
            grad_norm: 0.25,
            model_rmse: None,
        }];
        write_convergence_csv(&log, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn constant_model_renders_uniform_gray() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let model = crate::model::make_homogeneous(6, 4, 10.0, 3000.0).unwrap();
        write_model_pgm(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut newlines = 0usize;
        let mut start = 0usize;
        for (i, &b) in bytes.iter().enumerate() {
            if b == b'\n' {
                newlines += 1;
                if newlines == 3 {
                    start = i + 1;
                    break;
                }
            }
        }
        let pixels = &bytes[start..];
        assert_eq!(pixels.len(), 24);
        assert!(pixels.iter().all(|&p| p == pixels[0]));
        assert!(path.with_extension("pgm.txt").exists());
    }
}
