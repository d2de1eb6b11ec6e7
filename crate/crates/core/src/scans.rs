//! Parameter-scan drivers: mode counts versus pump power and crystal
//! distance, Kerr-phase calibration from collinear-minimum positions, and
//! gain calibration from intensity-versus-power data.

use rayon::prelude::*;
use thiserror::Error;

use crate::config::SourceConfig;
use crate::fit::{levenberg_marquardt, FitError};
use crate::forward::{ForwardError, ForwardModel};
use crate::schmidt::{mean_intensity_radial, mode_counts};

/// One scan point: mode counts, collinear intensity and the OAM marginals.
#[derive(Clone, Debug)]
pub struct ScanRecord {
    /// Scan variable value (W or m).
    pub value: f64,
    pub g0: f64,
    pub k: f64,
    pub k_oam: f64,
    /// Mean intensity at the innermost node relative to the radial peak.
    pub collinear_intensity: f64,
    /// OAM marginals Lambda_l for l = 0..=l_max (Lambda_{-l} = Lambda_l).
    pub lambda_l: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ScanResult {
    pub variable: &'static str,
    pub records: Vec<ScanRecord>,
    pub config: SourceConfig,
}

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("scan values must be strictly increasing and non-empty")]
    BadScanValues,
    #[error("scan value {0} outside the supported gap-distance envelope 7..27 mm")]
    DistanceOutOfRange(f64),
    #[error("power values must be positive")]
    NonPositivePower,
    #[error("gain calibration requires config.pump_power > 0 to anchor G0 ~ sqrt(P)")]
    NoGainAnchor,
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("observations must be monotone in pump power (minimum distance non-increasing)")]
    NonMonotone,
    #[error("intensity data must be positive and increasing with power")]
    BadIntensityData,
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

fn check_increasing(values: &[f64]) -> Result<(), ScanError> {
    if values.is_empty() || values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ScanError::BadScanValues);
    }
    Ok(())
}

fn scan_point(cfg: &SourceConfig) -> Result<ScanRecord, ScanError> {
    let model = ForwardModel::build(cfg)?;
    let counts = mode_counts(&model.spec);
    let radial = mean_intensity_radial(&model.dec, &model.spec);
    let peak = radial.iter().cloned().fold(0.0, f64::max);
    let lambda_l = (0..=model.spec.l_max)
        .map(|l| model.spec.marginal_l(l))
        .collect();
    Ok(ScanRecord {
        value: 0.0,
        g0: cfg.gain,
        k: counts.k,
        k_oam: counts.k_oam,
        collinear_intensity: if peak > 0.0 { radial[0] / peak } else { 0.0 },
        lambda_l,
    })
}

/// Mode counts versus pump power. G0 scales as sqrt(P), anchored by the
/// config's (pump_power, gain) pair; the Kerr phase kappa*P is applied to the
/// TPA at every point.
pub fn scan_power(config: &SourceConfig, powers: &[f64]) -> Result<ScanResult, ScanError> {
    check_increasing(powers)?;
    if powers.iter().any(|&p| p <= 0.0) {
        return Err(ScanError::NonPositivePower);
    }
    if config.pump_power <= 0.0 {
        return Err(ScanError::NoGainAnchor);
    }
    let gain_coeff = config.gain / config.pump_power.sqrt();
    let records: Vec<ScanRecord> = powers
        .par_iter()
        .map(|&p| {
            let mut cfg = config.clone();
            cfg.pump_power = p;
            cfg.gain = gain_coeff * p.sqrt();
            let mut rec = scan_point(&cfg)?;
            rec.value = p;
            Ok(rec)
        })
        .collect::<Result<_, ScanError>>()?;
    Ok(ScanResult {
        variable: "power",
        records,
        config: config.clone(),
    })
}

/// Mode counts versus crystal distance at fixed pump power.
pub fn scan_distance(config: &SourceConfig, distances: &[f64]) -> Result<ScanResult, ScanError> {
    check_increasing(distances)?;
    for &d in distances {
        if !(7e-3..=27e-3).contains(&d) {
            return Err(ScanError::DistanceOutOfRange(d));
        }
    }
    let records: Vec<ScanRecord> = distances
        .par_iter()
        .map(|&d| {
            let mut cfg = config.clone();
            cfg.gap_distance = d;
            let mut rec = scan_point(&cfg)?;
            rec.value = d;
            Ok(rec)
        })
        .collect::<Result<_, ScanError>>()?;
    Ok(ScanResult {
        variable: "distance",
        records,
        config: config.clone(),
    })
}

/// Recover the Kerr coefficient from observed collinear-minimum positions
/// (P, L_min): the pump phase phi_K = pi (L_pi - L_min) / L_pi depends
/// linearly on P with slope kappa.
pub fn kerr_calibration(observations: &[(f64, f64)], pi_distance: f64) -> Result<f64, ScanError> {
    if observations.len() < 2 {
        return Err(ScanError::TooFewObservations {
            need: 2,
            got: observations.len(),
        });
    }
    let mut obs = observations.to_vec();
    obs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if obs.windows(2).any(|w| w[1].1 > w[0].1 + 1e-12) {
        return Err(ScanError::NonMonotone);
    }
    // least-squares line phi_K = kappa * P + offset
    let n = obs.len() as f64;
    let (mut sp, mut sf, mut spp, mut spf) = (0.0, 0.0, 0.0, 0.0);
    for &(p, l_min) in &obs {
        let phi = std::f64::consts::PI * (pi_distance - l_min) / pi_distance;
        sp += p;
        sf += phi;
        spp += p * p;
        spf += p * phi;
    }
    let denom = n * spp - sp * sp;
    if denom.abs() < f64::MIN_POSITIVE {
        return Err(ScanError::NonMonotone);
    }
    Ok((n * spf - sp * sf) / denom)
}

/// Gain-versus-power calibration from PDC intensity data.
#[derive(Clone, Copy, Debug)]
pub struct GainCalibration {
    /// I = amplitude * sinh^2(coeff * sqrt(P)).
    pub amplitude: f64,
    pub coeff: f64,
}

impl GainCalibration {
    pub fn g0(&self, power: f64) -> f64 {
        self.coeff * power.sqrt()
    }
}

/// Least-squares fit of I = a sinh^2(c sqrt(P)). The coefficient c is scanned
/// coarsely (with the amplitude solved in closed form per candidate) and then
/// refined by LM.
pub fn calibrate_gain(points: &[(f64, f64)]) -> Result<GainCalibration, ScanError> {
    if points.len() < 3 {
        return Err(ScanError::TooFewObservations {
            need: 3,
            got: points.len(),
        });
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if pts.iter().any(|&(p, i)| p <= 0.0 || i <= 0.0) || pts.windows(2).any(|w| w[1].1 <= w[0].1) {
        return Err(ScanError::BadIntensityData);
    }

    let amplitude_for = |c: f64| -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        for &(p, i) in &pts {
            let s = (c * p.sqrt()).sinh().powi(2);
            num += i * s;
            den += s * s;
        }
        let a = if den > 0.0 { num / den } else { 0.0 };
        let resid: f64 = pts
            .iter()
            .map(|&(p, i)| {
                let m = a * (c * p.sqrt()).sinh().powi(2);
                (m - i) * (m - i)
            })
            .sum();
        (a, resid)
    };

    let p_max = pts.last().unwrap().0;
    let mut best = (1.0 / p_max.sqrt(), f64::INFINITY, 0.0);
    for k in 0..400 {
        // c sqrt(P_max) spanning ~0.01 .. 25
        let arg = 0.01 * (25.0_f64 / 0.01).powf(k as f64 / 399.0);
        let c = arg / p_max.sqrt();
        let (a, resid) = amplitude_for(c);
        if resid < best.1 {
            best = (c, resid, a);
        }
    }
    let fitted = levenberg_marquardt(&[best.2, best.0], |prm| {
        pts.iter()
            .map(|&(p, i)| prm[0] * (prm[1] * p.sqrt()).sinh().powi(2) - i)
            .collect()
    })?;
    Ok(GainCalibration {
        amplitude: fitted[0],
        coeff: fitted[1].abs(),
    })
}
