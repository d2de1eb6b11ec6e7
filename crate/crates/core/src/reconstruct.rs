//! Inverse pipeline: covariance estimation from frame stacks, radial mode
//! recovery via SVD of the auto-correlation block, OAM weight extraction by
//! fitting the azimuthal covariance, and g2-based mode counting.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::fit::{levenberg_marquardt, FitError};
use crate::synthesis::FrameStack;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordKind {
    /// Signed emission angle: negative half maps to azimuths around pi.
    SignedTheta,
    /// Azimuth on [0, 2pi).
    Azimuth,
}

/// Symmetric sample covariance over a labeled 1D coordinate.
#[derive(Clone, Debug)]
pub struct CovarianceMatrix {
    pub coord: Vec<f64>,
    pub kind: CoordKind,
    pub matrix: DMatrix<f64>,
    pub n_samples: usize,
}

/// Per-frame 1D spectra on a labeled coordinate.
#[derive(Clone, Debug)]
pub struct ReducedSpectra {
    pub coord: Vec<f64>,
    pub kind: CoordKind,
    pub spectra: Vec<Vec<f64>>,
}

/// Radial modes recovered from the auto-correlation block.
#[derive(Clone, Debug)]
pub struct RadialModes {
    pub theta: Vec<f64>,
    /// Weights Lambda_p, descending, normalized to unit sum.
    pub weights: Vec<f64>,
    /// Profiles u_p(theta), unit norm, positive at the modulus maximum.
    pub profiles: Vec<Vec<f64>>,
    /// Fraction of absolute covariance mass clipped at zero.
    pub clipped_fraction: f64,
}

/// OAM weights from the azimuthal covariance fit. `weights[l]` holds
/// Lambda_l for l = 0..=l_fit with Lambda_{-l} = Lambda_l, normalized so the
/// signed sum Lambda_0 + 2 sum_{l>0} Lambda_l is 1.
#[derive(Clone, Debug)]
pub struct OamSpectrum {
    pub weights: Vec<f64>,
    /// Fitted constant background, <= 0.
    pub background: f64,
    /// Root-mean-square fit residual.
    pub residual: f64,
    pub k_oam: f64,
}

impl OamSpectrum {
    /// Signed weight Lambda_l.
    pub fn weight(&self, l: i32) -> f64 {
        self.weights
            .get(l.unsigned_abs() as usize)
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct G2Stats {
    pub g2: f64,
    /// Effective mode count 1/(g2 - 1); undefined when g2 <= 1 within noise.
    pub k: Option<f64>,
    pub n_samples: usize,
}

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("sector half-angle {0} rad is narrower than one phi node")]
    SectorTooNarrow(f64),
    #[error("annulus [{lo}, {hi}] rad contains no theta node (grid spans 0..{max})")]
    AnnulusOutsideGrid { lo: f64, hi: f64, max: f64 },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("covariance is not on the expected coordinate: {0}")]
    WrongCoordinate(&'static str),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Default azimuthal sector half-angle for the radial reduction (4.5 deg).
pub const DEFAULT_SECTOR_HALF_ANGLE: f64 = 4.5 * PI / 180.0;
/// Default annulus half-width for the azimuthal reduction (1.1 mrad).
pub const DEFAULT_ANNULUS_HALF_WIDTH: f64 = 1.1e-3;

fn wrap_pi(phi: f64) -> f64 {
    let mut x = phi.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Reduce each frame to a 1D spectrum on signed theta: S(+theta) integrates
/// the azimuthal sector around 0, S(-theta) the sector around pi. The
/// integration measure is theta dtheta dphi, so S approximates per-bin photon
/// numbers and the recovered profiles live on the flat measure.
pub fn radial_sector_reduce(
    stack: &FrameStack,
    half_angle: f64,
) -> Result<ReducedSpectra, ReconstructError> {
    let grid = &stack.grid;
    let n_phi = grid.phi.len();
    let n_theta = grid.theta.len();
    let fwd: Vec<usize> = (0..n_phi)
        .filter(|&j| wrap_pi(grid.phi[j]).abs() <= half_angle)
        .collect();
    let bwd: Vec<usize> = (0..n_phi)
        .filter(|&j| wrap_pi(grid.phi[j] - PI).abs() <= half_angle)
        .collect();
    if fwd.is_empty() || bwd.is_empty() {
        return Err(ReconstructError::SectorTooNarrow(half_angle));
    }
    let mut coord = Vec::with_capacity(2 * n_theta);
    for i in (0..n_theta).rev() {
        coord.push(-grid.theta[i]);
    }
    coord.extend(grid.theta.iter().copied());

    let spectra = stack
        .frames
        .iter()
        .map(|f| {
            let mut s = vec![0.0; 2 * n_theta];
            for i in 0..n_theta {
                let w = grid.weight(i);
                let pos: f64 = fwd.iter().map(|&j| f.at(i, j, n_phi) as f64).sum::<f64>() * w;
                let neg: f64 = bwd.iter().map(|&j| f.at(i, j, n_phi) as f64).sum::<f64>() * w;
                s[n_theta + i] = pos;
                s[n_theta - 1 - i] = neg;
            }
            s
        })
        .collect();
    Ok(ReducedSpectra {
        coord,
        kind: CoordKind::SignedTheta,
        spectra,
    })
}

/// Reduce each frame to an azimuthal spectrum S(phi) by integrating theta
/// over an annulus around `theta_center`.
pub fn azimuth_annulus_reduce(
    stack: &FrameStack,
    theta_center: f64,
    half_width: f64,
) -> Result<ReducedSpectra, ReconstructError> {
    let grid = &stack.grid;
    let lo = theta_center - half_width;
    let hi = theta_center + half_width;
    let nodes: Vec<usize> = (0..grid.theta.len())
        .filter(|&i| grid.theta[i] >= lo && grid.theta[i] <= hi)
        .collect();
    if nodes.is_empty() || lo > grid.theta_max {
        return Err(ReconstructError::AnnulusOutsideGrid {
            lo,
            hi,
            max: grid.theta_max,
        });
    }
    let n_phi = grid.phi.len();
    let spectra = stack
        .frames
        .iter()
        .map(|f| {
            (0..n_phi)
                .map(|j| {
                    nodes
                        .iter()
                        .map(|&i| f.at(i, j, n_phi) as f64 * grid.theta[i] * grid.d_theta)
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(ReducedSpectra {
        coord: grid.phi.clone(),
        kind: CoordKind::Azimuth,
        spectra,
    })
}

/// Unbiased two-pass sample covariance (divisor n - 1) of per-frame spectra.
pub fn covariance(spectra: &ReducedSpectra) -> Result<CovarianceMatrix, ReconstructError> {
    let n = spectra.spectra.len();
    if n < 2 {
        return Err(ReconstructError::TooFewSamples { need: 2, got: n });
    }
    let dim = spectra.coord.len();
    let mut mean = vec![0.0; dim];
    for s in &spectra.spectra {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for s in &spectra.spectra {
        for i in 0..dim {
            let di = s[i] - mean[i];
            for j in i..dim {
                cov[(i, j)] += di * (s[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(CovarianceMatrix {
        coord: spectra.coord.clone(),
        kind: spectra.kind,
        matrix: cov,
        n_samples: n,
    })
}

/// Fraction of covariance mass in the cross quadrants (theta, theta' of
/// opposite sign) relative to the auto quadrants.
pub fn cross_to_auto_ratio(cov: &CovarianceMatrix) -> f64 {
    let dim = cov.coord.len();
    let half = dim / 2;
    let mut auto_mass = 0.0;
    let mut cross_mass = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let v = cov.matrix[(i, j)].abs();
            if (i < half) == (j < half) {
                auto_mass += v;
            } else {
                cross_mass += v;
            }
        }
    }
    cross_mass / auto_mass.max(f64::MIN_POSITIVE)
}

/// Recover radial mode weights and shapes from the auto-correlation block:
/// average the (+,+) and (-,-) quadrants, clip negatives at zero, take the
/// elementwise square root and an SVD.
pub fn radial_modes_from_cov(
    cov: &CovarianceMatrix,
    p_rec: usize,
) -> Result<RadialModes, ReconstructError> {
    if cov.kind != CoordKind::SignedTheta {
        return Err(ReconstructError::WrongCoordinate("expected signed theta"));
    }
    let dim = cov.coord.len();
    let half = dim / 2;
    // (+,+) quadrant is already ascending in theta; (-,-) must be flipped
    let mut block = DMatrix::zeros(half, half);
    for i in 0..half {
        for j in 0..half {
            let pp = cov.matrix[(half + i, half + j)];
            let nn = cov.matrix[(half - 1 - i, half - 1 - j)];
            block[(i, j)] = 0.5 * (pp + nn);
        }
    }
    let total_abs: f64 = block.iter().map(|v| v.abs()).sum();
    let clipped: f64 = block.iter().filter(|v| **v < 0.0).map(|v| -*v).sum();
    let clipped_fraction = if total_abs > 0.0 {
        clipped / total_abs
    } else {
        0.0
    };
    if clipped_fraction > 0.05 {
        eprintln!(
            "warning: {:.1}% of covariance mass clipped at zero before the square root",
            100.0 * clipped_fraction
        );
    }
    let sqrt_block = block.map(|v| v.max(0.0).sqrt());
    let svd = sqrt_block.svd(true, false);
    let u = svd.u.as_ref().expect("u requested");
    let take = p_rec.min(svd.singular_values.len());
    let total: f64 = svd.singular_values.iter().take(take).sum();
    let mut weights = Vec::with_capacity(take);
    let mut profiles = Vec::with_capacity(take);
    for p in 0..take {
        weights.push(svd.singular_values[p] / total.max(f64::MIN_POSITIVE));
        let mut col: Vec<f64> = u.column(p).iter().copied().collect();
        let imax = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if col[imax] < 0.0 {
            for v in &mut col {
                *v = -*v;
            }
        }
        profiles.push(col);
    }
    let theta = cov.coord[half..].to_vec();
    Ok(RadialModes {
        theta,
        weights,
        profiles,
        clipped_fraction,
    })
}

/// Average a square azimuthal covariance along phi + phi', giving the
/// circular profile C(dphi) = mean over (phi, phi') with phi - phi' = dphi.
pub fn dphi_average(cov: &CovarianceMatrix) -> Result<Vec<f64>, ReconstructError> {
    if cov.kind != CoordKind::Azimuth {
        return Err(ReconstructError::WrongCoordinate("expected azimuth"));
    }
    let n = cov.coord.len();
    let mut out = vec![0.0; n];
    for k in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += cov.matrix[((j + k) % n, j)];
        }
        out[k] = acc / n as f64;
    }
    Ok(out)
}

/// Analytic auto-correlation profile for known OAM weights:
/// C(dphi) = amplitude * [Lambda_0 + 2 sum_l Lambda_l cos(l dphi)]^2 + background.
pub fn analytic_dphi_profile(
    weights: &[f64],
    amplitude: f64,
    background: f64,
    dphi: &[f64],
) -> Vec<f64> {
    dphi.iter()
        .map(|&x| {
            let mut s = weights[0];
            for (l, w) in weights.iter().enumerate().skip(1) {
                s += 2.0 * w * (l as f64 * x).cos();
            }
            amplitude * s * s + background
        })
        .collect()
}

/// Fit C(dphi) with [sum_l Lambda_l e^{i l dphi}]^2 + b, with Lambda_l >= 0,
/// Lambda_{-l} = Lambda_l and a constant background b <= 0. Initialization is
/// the cosine transform of sqrt(max(C - min C, 0)); refinement is LM on the
/// square-root parametrization.
pub fn fit_oam_weights(
    c: &[f64],
    dphi: &[f64],
    l_fit: usize,
) -> Result<OamSpectrum, ReconstructError> {
    let n = c.len();
    if n < 2 * (l_fit + 2) {
        return Err(ReconstructError::TooFewSamples {
            need: 2 * (l_fit + 2),
            got: n,
        });
    }
    let c_min = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let c_mean = c.iter().sum::<f64>() / n as f64;
    let h: Vec<f64> = c.iter().map(|&v| (v - c_min).max(0.0).sqrt()).collect();
    let mut w_init = vec![0.0; l_fit + 1];
    for (l, w) in w_init.iter_mut().enumerate() {
        let proj: f64 = h
            .iter()
            .zip(dphi)
            .map(|(&hv, &x)| hv * (l as f64 * x).cos())
            .sum::<f64>()
            / n as f64;
        *w = proj.max(0.0);
    }
    // keep every parameter off the saddle at zero and guarantee the constant
    // component can represent a flat profile
    w_init[0] = w_init[0].max(c_mean.max(0.0).sqrt());
    let floor = 0.05 * w_init.iter().cloned().fold(1e-12, f64::max);
    for w in &mut w_init {
        *w = w.max(floor);
    }
    let residuals = |p: &[f64]| -> Vec<f64> {
        let b = -p[l_fit + 1] * p[l_fit + 1];
        (0..n)
            .map(|k| {
                let mut s = p[0] * p[0];
                for l in 1..=l_fit {
                    s += 2.0 * p[l] * p[l] * (l as f64 * dphi[k]).cos();
                }
                s * s + b - c[k]
            })
            .collect()
    };

    // multi-start: the cosine-transform guess plus one start per dominant-l
    // hypothesis, so profiles with no constant component (e.g. cos^2) do not
    // strand the solver in a local minimum
    let b_init = (-c_min.min(0.0)).sqrt();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let mut dct_start: Vec<f64> = w_init.iter().map(|w| w.sqrt()).collect();
    dct_start.push(b_init);
    starts.push(dct_start);
    let amp = (c.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - c_min.min(0.0))
        .max(1e-12)
        .sqrt();
    for dominant in 0..=l_fit {
        let mut s: Vec<f64> = (0..=l_fit)
            .map(|l| if l == dominant { amp } else { 0.2 * amp })
            .map(f64::sqrt)
            .collect();
        s.push(b_init);
        starts.push(s);
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut last_err = None;
    for start in &starts {
        // a start that runs out of iterations is dropped, not fatal: the
        // remaining starts still compete on final cost
        let candidate = match levenberg_marquardt(start, residuals) {
            Ok(c) => c,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let cost: f64 = residuals(&candidate).iter().map(|r| r * r).sum();
        if best.as_ref().is_none_or(|(_, c0)| cost < *c0) {
            best = Some((candidate, cost));
        }
    }
    let fitted = match best {
        Some((params, _)) => params,
        None => return Err(ReconstructError::Fit(last_err.expect("at least one start"))),
    };

    let raw: Vec<f64> = fitted[..=l_fit].iter().map(|s| s * s).collect();
    let background = -fitted[l_fit + 1] * fitted[l_fit + 1];
    let denom: f64 = raw[0] + 2.0 * raw[1..].iter().sum::<f64>();
    let weights: Vec<f64> = raw
        .iter()
        .map(|w| w / denom.max(f64::MIN_POSITIVE))
        .collect();
    let residual = {
        let model = analytic_dphi_profile(&raw, 1.0, background, dphi);
        (model
            .iter()
            .zip(c)
            .map(|(m, v)| (m - v) * (m - v))
            .sum::<f64>()
            / n as f64)
            .sqrt()
    };
    let sum_sq = weights[0] * weights[0] + 2.0 * weights[1..].iter().map(|w| w * w).sum::<f64>();
    Ok(OamSpectrum {
        weights,
        background,
        residual,
        k_oam: 1.0 / sum_sq,
    })
}

/// g2 = <N^2>/<N>^2 on bright data and the mode count K = 1/(g2 - 1).
pub fn g2_and_k(series: &[f64]) -> Result<G2Stats, ReconstructError> {
    if series.len() < 100 {
        return Err(ReconstructError::TooFewSamples {
            need: 100,
            got: series.len(),
        });
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let mean_sq = series.iter().map(|v| v * v).sum::<f64>() / n;
    let g2 = mean_sq / (mean * mean);
    let k = if g2 > 1.0 {
        Some(1.0 / (g2 - 1.0))
    } else {
        None
    };
    Ok(G2Stats {
        g2,
        k,
        n_samples: series.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spectra(kind: CoordKind, coord: Vec<f64>, rows: Vec<Vec<f64>>) -> ReducedSpectra {
        ReducedSpectra {
            coord,
            kind,
            spectra: rows,
        }
    }

    #[test]
    fn covariance_of_constant_frames_is_zero() {
        let s = spectra(
            CoordKind::Azimuth,
            vec![0.0, 1.0, 2.0],
            vec![vec![1.0, 2.0, 3.0]; 5],
        );
        let cov = covariance(&s).unwrap();
        assert!(cov.matrix.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn covariance_two_samples_matches_hand_formula() {
        // for two samples v, w: Cov = (v - w)(v - w)^T / 2
        let v = vec![1.0, -2.0, 0.5];
        let w = vec![0.0, 1.0, 2.0];
        let s = spectra(
            CoordKind::Azimuth,
            vec![0.0, 1.0, 2.0],
            vec![v.clone(), w.clone()],
        );
        let cov = covariance(&s).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = (v[i] - w[i]) * (v[j] - w[j]) / 2.0;
                assert_relative_eq!(cov.matrix[(i, j)], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn covariance_requires_two_frames() {
        let s = spectra(CoordKind::Azimuth, vec![0.0], vec![vec![1.0]]);
        assert!(matches!(
            covariance(&s),
            Err(ReconstructError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn dphi_average_lossless_on_stationary_cov() {
        let n = 32;
        let phi: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
        let f = |d: f64| 1.5 + (d).cos() + 0.3 * (2.0 * d).cos();
        let matrix = DMatrix::from_fn(n, n, |i, j| f(phi[i] - phi[j]));
        let cov = CovarianceMatrix {
            coord: phi.clone(),
            kind: CoordKind::Azimuth,
            matrix,
            n_samples: 10,
        };
        let prof = dphi_average(&cov).unwrap();
        for k in 0..n {
            assert_relative_eq!(prof[k], f(phi[k]), epsilon = 1e-12);
        }
        // variance dominates: C(0) is the maximum
        let max = prof.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(prof[0], max, epsilon = 1e-12);
    }

    #[test]
    fn fit_recovers_known_weights_exactly() {
        let n = 128;
        let phi: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
        let truth = [0.30, 0.22, 0.08, 0.05];
        let c = analytic_dphi_profile(&truth, 2.7, -0.1, &phi);
        let fit = fit_oam_weights(&c, &phi, 3).unwrap();
        let denom: f64 = truth[0] + 2.0 * truth[1..].iter().sum::<f64>();
        for l in 0..=3 {
            assert_relative_eq!(fit.weights[l], truth[l] / denom, epsilon = 1e-6);
        }
        assert!(fit.background <= 0.0);
        assert_relative_eq!(fit.background, -0.1, epsilon = 1e-6);
        assert!(fit.residual < 1e-7);
    }

    #[test]
    fn fit_single_mode_constant_profile() {
        let n = 64;
        let phi: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
        let c = vec![0.8; n];
        let fit = fit_oam_weights(&c, &phi, 3).unwrap();
        assert!(fit.weights[0] > 0.999, "Lambda_0 = {}", fit.weights[0]);
        assert_relative_eq!(fit.k_oam, 1.0, max_relative = 1e-2);
    }

    #[test]
    fn fit_two_equal_conjugate_modes() {
        // only l = +/-1: C(dphi) ~ cos^2(dphi)
        let n = 128;
        let phi: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
        let c: Vec<f64> = phi.iter().map(|&x| x.cos() * x.cos()).collect();
        let fit = fit_oam_weights(&c, &phi, 3).unwrap();
        assert!(fit.weights[0] < 1e-4, "Lambda_0 = {}", fit.weights[0]);
        assert_relative_eq!(fit.weights[1], 0.5, epsilon = 1e-4);
        assert!(fit.weights[2] < 1e-4);
        assert_relative_eq!(fit.k_oam, 2.0, max_relative = 1e-3);
    }

    #[test]
    fn g2_thermal_and_poissonian() {
        // exponential (single thermal mode) series via inverse CDF of fixed
        // uniform grid: deterministic, g2 -> 2
        let n = 200_000;
        let series: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                -(1.0 - u).ln()
            })
            .collect();
        let stats = g2_and_k(&series).unwrap();
        assert_relative_eq!(stats.g2, 2.0, max_relative = 1e-3);
        assert_relative_eq!(stats.k.unwrap(), 1.0, max_relative = 2e-3);

        // sum of 4 equal independent thermal modes: g2 = 1.25, K = 4
        let m = 50_000;
        let mut lcg: u64 = 12345;
        let mut exp_draw = || {
            // xorshift for a deterministic pseudo-random draw
            lcg ^= lcg << 13;
            lcg ^= lcg >> 7;
            lcg ^= lcg << 17;
            let u = (lcg >> 11) as f64 / (1u64 << 53) as f64;
            -(1.0 - u).ln()
        };
        let series4: Vec<f64> = (0..m)
            .map(|_| exp_draw() + exp_draw() + exp_draw() + exp_draw())
            .collect();
        let stats4 = g2_and_k(&series4).unwrap();
        assert!((stats4.g2 - 1.25).abs() < 0.01, "g2 = {}", stats4.g2);
        assert!((stats4.k.unwrap() - 4.0).abs() < 0.2);

        // near-constant series: g2 ~ 1, K undefined or huge
        let flat: Vec<f64> = (0..1000).map(|_| 5.0).collect();
        let sflat = g2_and_k(&flat).unwrap();
        assert!(sflat.k.is_none() || sflat.k.unwrap() > 1e6);
    }

    #[test]
    fn g2_requires_min_samples() {
        assert!(matches!(
            g2_and_k(&[1.0; 50]),
            Err(ReconstructError::TooFewSamples { .. })
        ));
    }
}
