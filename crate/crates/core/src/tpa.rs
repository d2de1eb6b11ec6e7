//! Two-photon amplitude (TPA) of the two-crystal scheme and its reduction to
//! per-l radial kernels.
//!
//! The model is paraxial and frequency-degenerate: a Gaussian pump angular
//! envelope, a single-crystal sinc with its phase, and the two-crystal
//! interference factor. The pump carries no OAM, so the TPA depends on the
//! azimuthal angles only through `phi_s - phi_i` and splits into independent
//! radial kernels per azimuthal index l.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::SourceConfig;
use crate::grid::PolarGrid;

/// Radial kernel of the TPA at fixed azimuthal index l, including the
/// sqrt(theta_s * theta_i) measure factor so that the downstream SVD is
/// taken with respect to the flat measure in theta.
#[derive(Clone, Debug)]
pub struct RadialKernel {
    /// Azimuthal index. Kernels for l and -l are identical.
    pub l: i32,
    /// Row-major matrix on theta_nodes x theta_nodes.
    pub matrix: nalgebra::DMatrix<Complex64>,
    /// Whether the azimuthal quadrature passed the halving check.
    pub converged: bool,
    /// Relative change observed when halving the azimuthal node count.
    pub quadrature_residual: f64,
}

#[derive(Debug, Error)]
pub enum TpaError {
    #[error("azimuthal index {l} exceeds l_max = {l_max}")]
    LOutOfRange { l: i32, l_max: i32 },
    #[error("non-finite kernel entry at ({i}, {j}) for l = {l}")]
    NonFinite { l: i32, i: usize, j: usize },
}

/// Transverse wavenumber of the detected radiation, k = 2*pi / lambda.
pub fn detect_wavenumber(cfg: &SourceConfig) -> f64 {
    2.0 * PI / cfg.detect_wavelength
}

/// Pump field-amplitude waist w such that the intensity FWHM matches the
/// configured value: w = FWHM / sqrt(2 ln 2).
pub fn pump_waist(cfg: &SourceConfig) -> f64 {
    cfg.pump_fwhm / (2.0 * std::f64::consts::LN_2).sqrt()
}

/// Pump angular envelope E_p(Q) = exp(-Q^2 w^2 / 4) at transverse
/// wavenumber Q = |q_s + q_i|.
pub fn pump_envelope(cfg: &SourceConfig, q_sum: f64) -> f64 {
    let w = pump_waist(cfg);
    (-q_sum * q_sum * w * w / 4.0).exp()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Longitudinal phase mismatch inside one crystal,
/// Delta = |q_s - q_i|^2 / (4 k) + Delta0.
pub fn phase_mismatch(cfg: &SourceConfig, q_diff_sq: f64) -> f64 {
    let k = detect_wavenumber(cfg);
    q_diff_sq / (4.0 * k) + cfg.collinear_mismatch
}

/// Interferometer phase between the emission amplitudes of the two crystals:
///
/// Psi = Delta*L_c + pi*L/L_pi - (|q_s|^2 + |q_i|^2)*L/(2k) + kappa*P
///
/// The air-gap dispersive phase is lumped into the calibrated pi*L/L_pi term.
/// The Kerr term enters with a sign such that increasing pump power moves the
/// collinear destructive-interference point to smaller gap distances.
pub fn interference_phase(cfg: &SourceConfig, q_s_sq: f64, q_i_sq: f64, q_diff_sq: f64) -> f64 {
    let k = detect_wavenumber(cfg);
    let delta = phase_mismatch(cfg, q_diff_sq);
    delta * cfg.crystal_length + PI * cfg.gap_distance / cfg.pi_distance
        - (q_s_sq + q_i_sq) * cfg.gap_distance / (2.0 * k)
        + cfg.kerr_coeff * cfg.pump_power
}

/// TPA evaluated from squared transverse-wavevector invariants. All angular
/// dependence enters through |q_s|^2, |q_i|^2 and |q_s +/- q_i|^2.
fn tpa_from_invariants(
    cfg: &SourceConfig,
    q_s_sq: f64,
    q_i_sq: f64,
    q_sum: f64,
    q_diff_sq: f64,
) -> Complex64 {
    let delta = phase_mismatch(cfg, q_diff_sq);
    let half = delta * cfg.crystal_length / 2.0;
    let psi = interference_phase(cfg, q_s_sq, q_i_sq, q_diff_sq);
    let envelope = pump_envelope(cfg, q_sum) * sinc(half);
    let crystal_phase = Complex64::from_polar(1.0, half);
    let interference = (Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, psi)) / 2.0;
    envelope * crystal_phase * interference
}

/// Two-photon amplitude at emission angles (theta_s, phi_s), (theta_i, phi_i).
pub fn tpa_pointwise(
    cfg: &SourceConfig,
    theta_s: f64,
    phi_s: f64,
    theta_i: f64,
    phi_i: f64,
) -> Complex64 {
    let k = detect_wavenumber(cfg);
    let qs = k * theta_s;
    let qi = k * theta_i;
    let dphi = phi_s - phi_i;
    let q_s_sq = qs * qs;
    let q_i_sq = qi * qi;
    let q_sum_sq = q_s_sq + q_i_sq + 2.0 * qs * qi * dphi.cos();
    let q_diff_sq = q_s_sq + q_i_sq - 2.0 * qs * qi * dphi.cos();
    tpa_from_invariants(
        cfg,
        q_s_sq,
        q_i_sq,
        q_sum_sq.max(0.0).sqrt(),
        q_diff_sq.max(0.0),
    )
}

/// Azimuthal Fourier component of the TPA at index l, with the measure factor:
///
/// K_l(theta_s, theta_i) = sqrt(theta_s * theta_i) / (2 pi)
///     * Int F(theta_s, theta_i, dphi) e^{-i l (dphi - pi)} d(dphi)
///
/// evaluated by the uniform trapezoid rule over the grid's phi nodes (exact
/// for band-limited integrands). The e^{i l pi} shift centers the transform
/// on the anti-collinear pairing where the pump overlap peaks.
pub fn radial_kernel(
    cfg: &SourceConfig,
    grid: &PolarGrid,
    l: i32,
) -> Result<RadialKernel, TpaError> {
    if l.abs() > cfg.l_max {
        return Err(TpaError::LOutOfRange {
            l,
            l_max: cfg.l_max,
        });
    }
    let kernels = radial_kernels(cfg, grid, &[l])?;
    Ok(kernels.into_iter().next().expect("one kernel requested"))
}

/// Compute kernels for several l values in one pass over the TPA samples.
pub fn radial_kernels(
    cfg: &SourceConfig,
    grid: &PolarGrid,
    ls: &[i32],
) -> Result<Vec<RadialKernel>, TpaError> {
    for &l in ls {
        if l.abs() > cfg.l_max {
            return Err(TpaError::LOutOfRange {
                l,
                l_max: cfg.l_max,
            });
        }
    }
    let n = grid.theta.len();
    let n_phi = grid.phi.len();
    let k = detect_wavenumber(cfg);

    // e^{-i l (dphi - pi)} tables per requested l
    let phases: Vec<Vec<Complex64>> = ls
        .iter()
        .map(|&l| {
            (0..n_phi)
                .map(|j| Complex64::from_polar(1.0, -(l as f64) * (grid.phi[j] - PI)))
                .collect()
        })
        .collect();

    // rows of all kernels, parallel over theta_s
    let rows: Vec<Vec<Vec<Complex64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let qs = k * grid.theta[i];
            let q_s_sq = qs * qs;
            let mut row = vec![vec![Complex64::new(0.0, 0.0); n]; 2 * ls.len()];
            let mut samples = vec![Complex64::new(0.0, 0.0); n_phi];
            for j in 0..n {
                let qi = k * grid.theta[j];
                let q_i_sq = qi * qi;
                for (m, &dphi) in grid.phi.iter().enumerate() {
                    let c = dphi.cos();
                    let q_sum_sq = (q_s_sq + q_i_sq + 2.0 * qs * qi * c).max(0.0);
                    let q_diff_sq = (q_s_sq + q_i_sq - 2.0 * qs * qi * c).max(0.0);
                    samples[m] =
                        tpa_from_invariants(cfg, q_s_sq, q_i_sq, q_sum_sq.sqrt(), q_diff_sq);
                }
                let measure = (grid.theta[i] * grid.theta[j]).sqrt();
                for (li, phase) in phases.iter().enumerate() {
                    let mut full = Complex64::new(0.0, 0.0);
                    let mut half = Complex64::new(0.0, 0.0);
                    for m in 0..n_phi {
                        let term = samples[m] * phase[m];
                        full += term;
                        if m % 2 == 0 {
                            half += term;
                        }
                    }
                    row[2 * li][j] = measure * full / n_phi as f64;
                    // same integral on every other node, for the convergence check
                    row[2 * li + 1][j] = measure * half / (n_phi as f64 / 2.0);
                }
            }
            row
        })
        .collect();

    let mut out = Vec::with_capacity(ls.len());
    for (li, &l) in ls.iter().enumerate() {
        let mut matrix = nalgebra::DMatrix::zeros(n, n);
        let mut norm_full = 0.0f64;
        let mut norm_diff = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let v = rows[i][2 * li][j];
                if !v.re.is_finite() || !v.im.is_finite() {
                    return Err(TpaError::NonFinite { l, i, j });
                }
                matrix[(i, j)] = v;
                norm_full += v.norm_sqr();
                norm_diff += (v - rows[i][2 * li + 1][j]).norm_sqr();
            }
        }
        let residual = if norm_full > 0.0 {
            (norm_diff / norm_full).sqrt()
        } else {
            0.0
        };
        let converged = residual <= 1e-6;
        if !converged {
            eprintln!(
                "warning: azimuthal quadrature for l = {l} changed by {residual:.3e} \
                 when halving n_phi; increase n_phi"
            );
        }
        out.push(RadialKernel {
            l,
            matrix,
            converged,
            quadrature_residual: residual,
        });
    }
    Ok(out)
}
