//! File formats: CSV tables with fixed 9-significant-digit formatting,
//! 8-bit binary portable graymaps, and the frame-stack raster format
//! (little-endian f32 rasters plus a `key = value` sidecar).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, SourceConfig};
use crate::grid::PolarGrid;
use crate::reconstruct::{CoordKind, CovarianceMatrix, OamSpectrum, RadialModes};
use crate::scans::ScanResult;
use crate::schmidt::{GainedSpectrum, SchmidtDecomposition};
use crate::synthesis::{DetectionMode, Frame, FrameStack};

pub const STACK_FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing sidecar {0} (expected next to the stack file)")]
    MissingSidecar(PathBuf),
    #[error("sidecar {path}: missing key `{key}`")]
    MissingKey { path: PathBuf, key: String },
    #[error("sidecar {path}: bad value for `{key}`: {value}")]
    BadKey {
        path: PathBuf,
        key: String,
        value: String,
    },
    #[error("stack size mismatch: sidecar declares {expected} f32 values, file holds {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Fixed-width float formatting: 9 significant digits, so identical values
/// always produce identical bytes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.8e}")
}

fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(file_err(path))
}

/// Write a CSV table with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Eigenvalue/weight table: one row per (l, p) with signed l.
pub fn write_weights_csv(
    path: &Path,
    dec: &SchmidtDecomposition,
    spec: &GainedSpectrum,
) -> Result<(), IoError> {
    let mut rows = Vec::new();
    for l in -dec.l_max..=dec.l_max {
        for p in 0..dec.p_max {
            rows.push(vec![
                l as f64,
                p as f64,
                dec.lambda(l, p),
                spec.weight(l, p),
            ]);
        }
    }
    write_csv(path, &["l", "p", "lambda", "weight"], &rows)
}

/// Radial mode profiles: theta column followed by re/im columns per (|l|, p).
pub fn write_modes_csv(path: &Path, dec: &SchmidtDecomposition) -> Result<(), IoError> {
    let mut header = vec!["theta".to_string()];
    for l in 0..=dec.l_max {
        for p in 0..dec.p_max {
            header.push(format!("re_l{l}_p{p}"));
            header.push(format!("im_l{l}_p{p}"));
        }
    }
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, &theta) in dec.grid.theta.iter().enumerate() {
        let mut cells = vec![fmt_f64(theta)];
        for l in 0..=dec.l_max {
            for p in 0..dec.p_max {
                let z = dec.profile(l, p)[i];
                cells.push(fmt_f64(z.re));
                cells.push(fmt_f64(z.im));
            }
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Mean intensity as a CSV matrix (rows = theta nodes, columns = phi nodes).
pub fn write_matrix_csv(path: &Path, data: &[f64], n_cols: usize) -> Result<(), IoError> {
    let mut out = String::new();
    for row in data.chunks(n_cols) {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// 8-bit binary portable graymap (P5), values scaled by the data maximum.
pub fn write_pgm(path: &Path, data: &[f64], width: usize, height: usize) -> Result<(), IoError> {
    assert_eq!(data.len(), width * height);
    let peak = data.iter().cloned().fold(0.0, f64::max);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(data.iter().map(|&v| {
        if peak > 0.0 {
            (255.0 * (v / peak).clamp(0.0, 1.0)).round() as u8
        } else {
            0
        }
    }));
    fs::write(path, bytes).map_err(file_err(path))
}

/// Covariance matrix as CSV: a coordinate header row, then matrix rows.
pub fn write_covariance_csv(path: &Path, cov: &CovarianceMatrix) -> Result<(), IoError> {
    let mut out = String::new();
    let kind = match cov.kind {
        CoordKind::SignedTheta => "signed_theta",
        CoordKind::Azimuth => "azimuth",
    };
    out.push_str(&format!("# kind = {kind}, n_samples = {}\n", cov.n_samples));
    let coord: Vec<String> = cov.coord.iter().map(|&v| fmt_f64(v)).collect();
    out.push_str(&coord.join(","));
    out.push('\n');
    for i in 0..cov.coord.len() {
        let cells: Vec<String> = (0..cov.coord.len())
            .map(|j| fmt_f64(cov.matrix[(i, j)]))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Recovered radial modes: weights table plus profile columns.
pub fn write_radial_modes_csv(path: &Path, modes: &RadialModes) -> Result<(), IoError> {
    let mut header = vec!["theta".to_string()];
    for p in 0..modes.profiles.len() {
        header.push(format!("u_p{p}"));
    }
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, &theta) in modes.theta.iter().enumerate() {
        let mut cells = vec![fmt_f64(theta)];
        for prof in &modes.profiles {
            cells.push(fmt_f64(prof[i]));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// OAM fit result: weight table plus a structured-text summary.
pub fn write_oam_csv(path: &Path, summary_path: &Path, oam: &OamSpectrum) -> Result<(), IoError> {
    let rows: Vec<Vec<f64>> = oam
        .weights
        .iter()
        .enumerate()
        .map(|(l, &w)| vec![l as f64, w])
        .collect();
    write_csv(path, &["l", "weight"], &rows)?;
    let summary = format!(
        "k_oam = {}\nbackground = {}\nresidual = {}\n",
        fmt_f64(oam.k_oam),
        fmt_f64(oam.background),
        fmt_f64(oam.residual)
    );
    write_text(summary_path, &summary)
}

/// Scan result: one row per scan point.
pub fn write_scan_csv(path: &Path, scan: &ScanResult) -> Result<(), IoError> {
    let l_max = scan
        .records
        .first()
        .map_or(0, |r| r.lambda_l.len().saturating_sub(1));
    let mut header = vec![
        scan.variable.to_string(),
        "g0".to_string(),
        "k".to_string(),
        "k_oam".to_string(),
        "collinear_intensity".to_string(),
    ];
    for l in 0..=l_max {
        header.push(format!("lambda_l{l}"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = scan
        .records
        .iter()
        .map(|r| {
            let mut row = vec![r.value, r.g0, r.k, r.k_oam, r.collinear_intensity];
            row.extend(&r.lambda_l);
            row
        })
        .collect();
    write_csv(path, &header_refs, &rows)
}

fn sidecar_path(stack_path: &Path) -> PathBuf {
    let mut p = stack_path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

/// Write a frame stack as a little-endian f32 raster file plus a `.meta`
/// sidecar holding everything needed to reinterpret and reproduce it.
pub fn write_stack(stack_path: &Path, stack: &FrameStack) -> Result<(), IoError> {
    let file = fs::File::create(stack_path).map_err(file_err(stack_path))?;
    let mut w = BufWriter::new(file);
    for frame in &stack.frames {
        for &v in &frame.values {
            w.write_all(&v.to_le_bytes())
                .map_err(file_err(stack_path))?;
        }
    }
    w.flush().map_err(file_err(stack_path))?;

    let mut meta = String::new();
    meta.push_str(&format!("format_version = {STACK_FORMAT_VERSION}\n"));
    meta.push_str(&format!("n_frames = {}\n", stack.frames.len()));
    meta.push_str(&format!("n_theta = {}\n", stack.n_theta()));
    meta.push_str(&format!("n_phi = {}\n", stack.n_phi()));
    meta.push_str(&format!("theta_max = {:e}\n", stack.grid.theta_max));
    meta.push_str(&format!("seed = {}\n", stack.seed));
    meta.push_str(&format!(
        "detection_mode = {}\n",
        stack.detection_mode.as_str()
    ));
    meta.push_str(&format!("normalized = {}\n", stack.normalized));
    for (k, v) in stack.config.entries() {
        meta.push_str(&format!("config.{k} = {v}\n"));
    }
    let side = sidecar_path(stack_path);
    write_text(&side, &meta)
}

fn meta_entries(path: &Path, text: &str) -> Result<Vec<(String, String)>, IoError> {
    let mut out = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| IoError::BadKey {
            path: path.to_path_buf(),
            key: line.to_string(),
            value: String::new(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Read a frame stack written by [`write_stack`]. The sidecar is mandatory.
pub fn read_stack(stack_path: &Path) -> Result<FrameStack, IoError> {
    let side = sidecar_path(stack_path);
    if !side.exists() {
        return Err(IoError::MissingSidecar(side));
    }
    let text = fs::read_to_string(&side).map_err(file_err(&side))?;
    let entries = meta_entries(&side, &text)?;
    let lookup = |key: &str| -> Result<&str, IoError> {
        entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| IoError::MissingKey {
                path: side.clone(),
                key: key.to_string(),
            })
    };
    macro_rules! parse_key {
        ($key:expr, $ty:ty) => {{
            let v = lookup($key)?;
            v.parse::<$ty>().map_err(|_| IoError::BadKey {
                path: side.clone(),
                key: $key.to_string(),
                value: v.to_string(),
            })?
        }};
    }
    let n_frames = parse_key!("n_frames", usize);
    let n_theta = parse_key!("n_theta", usize);
    let n_phi = parse_key!("n_phi", usize);
    let theta_max = parse_key!("theta_max", f64);
    let seed = parse_key!("seed", u64);
    let normalized = parse_key!("normalized", bool);
    let mode_str = lookup("detection_mode")?;
    let detection_mode = DetectionMode::parse(mode_str).ok_or_else(|| IoError::BadKey {
        path: side.clone(),
        key: "detection_mode".to_string(),
        value: mode_str.to_string(),
    })?;
    let config_text: String = entries
        .iter()
        .filter_map(|(k, v)| {
            k.strip_prefix("config.")
                .map(|key| format!("{key} = {v}\n"))
        })
        .collect();
    let config = SourceConfig::parse(&config_text)?;

    let bytes = fs::read(stack_path).map_err(file_err(stack_path))?;
    let expected = n_frames * n_theta * n_phi;
    if bytes.len() != expected * 4 {
        return Err(IoError::SizeMismatch {
            expected,
            actual: bytes.len() / 4,
        });
    }
    let per_frame = n_theta * n_phi;
    let frames = (0..n_frames)
        .map(|s| {
            let start = s * per_frame * 4;
            let values = bytes[start..start + per_frame * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Frame {
                values,
                shot: s,
                normalized,
            }
        })
        .collect();
    Ok(FrameStack {
        frames,
        grid: PolarGrid::with_extent(theta_max, n_theta, n_phi),
        config,
        seed,
        detection_mode,
        normalized,
    })
}

/// Export one frame as a PGM on a Cartesian raster via the r = f*theta map.
pub fn write_frame_pgm(
    path: &Path,
    frame: &Frame,
    grid: &PolarGrid,
    n_pixels: usize,
) -> Result<(), IoError> {
    let img = crate::synthesis::to_cartesian(frame, grid, n_pixels);
    write_pgm(path, &img, n_pixels, n_pixels)
}

/// Run manifest: enough `key = value` lines to reproduce the run bit-exactly.
pub fn write_manifest(dir: &Path, entries: &[(&str, String)]) -> Result<(), IoError> {
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    write_text(&dir.join("manifest.txt"), &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schmidt::redistribute;

    fn tiny_stack() -> FrameStack {
        let grid = PolarGrid::with_extent(0.02, 16, 16);
        let dec = SchmidtDecomposition::from_lambdas(grid, vec![vec![0.6], vec![0.2]]);
        let spec = redistribute(&dec, 4.0);
        let cfg = SourceConfig::default();
        let synth = crate::synthesis::Synthesizer::new(
            &dec,
            &spec,
            &cfg,
            DetectionMode::SignalOnly,
            21,
            true,
        );
        synth.stack(5, &cfg)
    }

    #[test]
    fn stack_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.f32");
        let stack = tiny_stack();
        write_stack(&path, &stack).unwrap();
        let back = read_stack(&path).unwrap();
        assert_eq!(back.frames.len(), stack.frames.len());
        assert_eq!(back.seed, stack.seed);
        assert_eq!(back.detection_mode, stack.detection_mode);
        assert_eq!(back.config, stack.config);
        assert_eq!(back.grid, stack.grid);
        for (a, b) in stack.frames.iter().zip(&back.frames) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn missing_sidecar_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.f32");
        fs::write(&path, [0u8; 16]).unwrap();
        assert!(matches!(read_stack(&path), Err(IoError::MissingSidecar(_))));
    }

    #[test]
    fn size_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.f32");
        let stack = tiny_stack();
        write_stack(&path, &stack).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_stack(&path),
            Err(IoError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn csv_formatting_is_stable() {
        assert_eq!(fmt_f64(1.0), "1.00000000e0");
        assert_eq!(fmt_f64(-0.5), "-5.00000000e-1");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &["a", "b"], &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("a,b\n1.00000000e0,2.00000000e0\n"));
    }

    #[test]
    fn pgm_header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        write_pgm(&path, &[0.0, 0.5, 1.0, 2.0], 2, 2).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0u8, 64, 128, 255]);
    }
}
