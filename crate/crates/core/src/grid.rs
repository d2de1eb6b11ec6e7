//! Polar far-field grid with quadrature weights.
//!
//! Theta nodes are uniform with a half-node offset (no node at theta = 0, so
//! 1/theta factors stay finite); phi nodes are uniform on [0, 2pi). The outer
//! radius is chosen adaptively so that the mean-intensity envelope at the
//! outermost node falls below 1% of its peak.

use std::f64::consts::PI;

use thiserror::Error;

use crate::config::SourceConfig;
use crate::tpa;

/// Hard cap on the adaptive outer radius (rad).
pub const THETA_MAX_CAP: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct PolarGrid {
    /// Emission-angle nodes (rad), strictly increasing, uniform, offset by
    /// half a step from zero.
    pub theta: Vec<f64>,
    /// Azimuthal nodes (rad), uniform on [0, 2pi).
    pub phi: Vec<f64>,
    /// Theta step (rad).
    pub d_theta: f64,
    /// Phi step (rad).
    pub d_phi: f64,
    /// Outer radius theta_max (rad); the last node is theta_max - d_theta/2.
    pub theta_max: f64,
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("node counts must be at least 16, got {n_theta} x {n_phi}")]
    TooFewNodes { n_theta: usize, n_phi: usize },
    #[error(
        "intensity tail criterion not met below the hard cap theta_max = {THETA_MAX_CAP} rad \
         (tail fraction {tail:.3e} at the cap)"
    )]
    TailNotMet { tail: f64 },
}

impl PolarGrid {
    /// Uniform grid with the given outer radius.
    pub fn with_extent(theta_max: f64, n_theta: usize, n_phi: usize) -> Self {
        let d_theta = theta_max / n_theta as f64;
        let d_phi = 2.0 * PI / n_phi as f64;
        PolarGrid {
            theta: (0..n_theta).map(|i| (i as f64 + 0.5) * d_theta).collect(),
            phi: (0..n_phi).map(|j| j as f64 * d_phi).collect(),
            d_theta,
            d_phi,
            theta_max,
        }
    }

    /// Quadrature weight of node (i, j) implementing the theta dtheta dphi
    /// area element.
    pub fn weight(&self, i: usize) -> f64 {
        self.theta[i] * self.d_theta * self.d_phi
    }

    /// Index of the theta node closest to the given angle.
    pub fn nearest_theta(&self, theta: f64) -> usize {
        let i = (theta / self.d_theta - 0.5).round();
        (i.max(0.0) as usize).min(self.theta.len() - 1)
    }

    /// Index of the phi node closest to the given azimuth (wrapped).
    pub fn nearest_phi(&self, phi: f64) -> usize {
        let wrapped = phi.rem_euclid(2.0 * PI);
        (wrapped / self.d_phi).round() as usize % self.phi.len()
    }
}

/// Mean-intensity envelope used for the tail criterion: the phi-integrated
/// intensity marginal of the TPA at emission angle theta,
/// I(theta) ~ theta * Int |F(theta, 0, theta_i, phi_i)|^2 theta_i dtheta_i dphi_i,
/// evaluated on a coarse probe grid.
fn intensity_envelope(cfg: &SourceConfig, theta: f64, theta_max: f64) -> f64 {
    let n_i = 96;
    let n_phi = 48;
    let d_i = theta_max / n_i as f64;
    let d_phi = 2.0 * PI / n_phi as f64;
    let mut total = 0.0;
    for ii in 0..n_i {
        let theta_i = (ii as f64 + 0.5) * d_i;
        for jj in 0..n_phi {
            let phi_i = jj as f64 * d_phi;
            total += tpa::tpa_pointwise(cfg, theta, 0.0, theta_i, phi_i).norm_sqr()
                * theta_i
                * d_i
                * d_phi;
        }
    }
    total * theta
}

/// Build a polar grid whose outer radius satisfies the 1%-tail criterion.
///
/// The radius starts from a diffraction-scale guess and grows geometrically
/// until the envelope at the outermost node drops below 1% of its peak, up to
/// the hard cap [`THETA_MAX_CAP`].
pub fn build_grid(
    cfg: &SourceConfig,
    n_theta: usize,
    n_phi: usize,
) -> Result<PolarGrid, GridError> {
    if n_theta < 16 || n_phi < 16 {
        return Err(GridError::TooFewNodes { n_theta, n_phi });
    }
    // first constructive ring sits near q^2 (L - L_c) / k ~ pi
    let k = tpa::detect_wavenumber(cfg);
    let gap = (cfg.gap_distance - cfg.crystal_length).max(cfg.crystal_length);
    let mut theta_max = 3.0 * (PI / (k * gap)).sqrt();

    loop {
        let n_probe = 64;
        let d = theta_max / n_probe as f64;
        let env: Vec<f64> = (0..n_probe)
            .map(|i| intensity_envelope(cfg, (i as f64 + 0.5) * d, theta_max))
            .collect();
        let peak = env.iter().cloned().fold(0.0, f64::max);
        let tail = env[n_probe - 1] / peak;
        if tail < 0.01 {
            return Ok(PolarGrid::with_extent(theta_max, n_theta, n_phi));
        }
        let next = theta_max * 1.3;
        if next > THETA_MAX_CAP {
            return Err(GridError::TailNotMet { tail });
        }
        theta_max = next;
    }
}
