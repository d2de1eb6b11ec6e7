//! Schmidt eigenvalues and radial mode profiles by per-l SVD of the radial
//! kernels, high-gain weight redistribution, and mode-count observables.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::PolarGrid;
use crate::tpa::RadialKernel;

/// Per-(l, p) eigenvalues and radial profiles. Kernels for l and -l are
/// identical, so data is stored for |l| = 0..=l_max and each |l| > 0 entry
/// counts twice in all signed sums.
#[derive(Clone, Debug)]
pub struct SchmidtDecomposition {
    pub grid: PolarGrid,
    pub l_max: i32,
    pub p_max: usize,
    /// lambdas[|l|][p], normalized so the sum over signed l and p is 1.
    lambdas: Vec<Vec<f64>>,
    /// profiles[|l|][p]: unit-norm radial profile on theta nodes (flat
    /// measure), phase-fixed real-positive at the profile's modulus maximum.
    profiles: Vec<Vec<DVector<Complex64>>>,
    /// Residual Takagi phase gamma such that
    /// F_l ~ sum_p sqrt(lambda) e^{i gamma} u_p(theta_s) u_p(theta_i).
    takagi_phases: Vec<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum SchmidtError {
    #[error("kernel list must cover |l| = 0..=l_max contiguously; missing |l| = {0}")]
    MissingKernel(i32),
    #[error("empty kernel list")]
    Empty,
    #[error("p_max must be >= 1")]
    BadPMax,
    #[error("SVD failed for l = {0}")]
    SvdFailure(i32),
}

impl SchmidtDecomposition {
    /// Eigenvalue of mode (l, p); l may be signed.
    pub fn lambda(&self, l: i32, p: usize) -> f64 {
        self.lambdas[l.unsigned_abs() as usize][p]
    }

    /// Radial profile of mode (l, p); identical for l and -l.
    pub fn profile(&self, l: i32, p: usize) -> &DVector<Complex64> {
        &self.profiles[l.unsigned_abs() as usize][p]
    }

    /// Residual kernel phase of mode (l, p).
    pub fn takagi_phase(&self, l: i32, p: usize) -> f64 {
        self.takagi_phases[l.unsigned_abs() as usize][p]
    }

    /// The physical i^l phase factor carried by each mode, kept as metadata
    /// rather than baked into the profiles.
    pub fn il_phase(l: i32) -> Complex64 {
        Complex64::i().powi(l)
    }

    /// Iterate over signed modes (l, p, lambda).
    pub fn signed_modes(&self) -> impl Iterator<Item = (i32, usize, f64)> + '_ {
        (-self.l_max..=self.l_max)
            .flat_map(move |l| (0..self.p_max).map(move |p| (l, p, self.lambda(l, p))))
    }

    /// Largest eigenvalue (weight of the strongest Schmidt mode).
    pub fn lambda_max(&self) -> f64 {
        self.lambdas
            .iter()
            .flat_map(|row| row.iter().cloned())
            .fold(0.0, f64::max)
    }

    /// Construct a decomposition from raw eigenvalues only, with a synthetic
    /// orthonormal radial basis (DCT-II rows), for calibration and tests.
    /// lambdas[|l|][p].
    pub fn from_lambdas(grid: PolarGrid, lambdas: Vec<Vec<f64>>) -> Self {
        let l_max = lambdas.len() as i32 - 1;
        let p_max = lambdas.first().map_or(0, Vec::len);
        let n = grid.theta.len();
        let basis = |p: usize| -> DVector<Complex64> {
            DVector::from_fn(n, |i, _| {
                let v = if p == 0 {
                    (1.0 / n as f64).sqrt()
                } else {
                    (2.0 / n as f64).sqrt()
                        * (std::f64::consts::PI * p as f64 * (i as f64 + 0.5) / n as f64).cos()
                };
                Complex64::new(v, 0.0)
            })
        };
        let profiles = lambdas
            .iter()
            .map(|row| (0..row.len()).map(basis).collect())
            .collect();
        let takagi_phases = lambdas.iter().map(|row| vec![0.0; row.len()]).collect();
        let mut dec = SchmidtDecomposition {
            grid,
            l_max,
            p_max,
            lambdas,
            profiles,
            takagi_phases,
        };
        dec.normalize();
        dec
    }

    fn normalize(&mut self) {
        let total: f64 = self
            .lambdas
            .iter()
            .enumerate()
            .map(|(l, row)| {
                let mult = if l == 0 { 1.0 } else { 2.0 };
                mult * row.iter().sum::<f64>()
            })
            .sum();
        if total > 0.0 {
            for row in &mut self.lambdas {
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
        }
    }
}

/// Per-l SVD of the radial kernels. Squared singular values are pooled over
/// signed l (each |l| > 0 counted twice) and normalized to unit sum; profiles
/// are phase-fixed real-positive at their modulus maximum.
pub fn decompose(
    kernels: &[RadialKernel],
    grid: &PolarGrid,
    p_max: usize,
) -> Result<SchmidtDecomposition, SchmidtError> {
    if p_max == 0 {
        return Err(SchmidtError::BadPMax);
    }
    if kernels.is_empty() {
        return Err(SchmidtError::Empty);
    }
    let l_max = kernels.iter().map(|k| k.l.abs()).max().unwrap();
    // one kernel per |l|, contiguous from 0
    let mut by_abs: Vec<Option<&RadialKernel>> = vec![None; (l_max + 1) as usize];
    for k in kernels {
        by_abs[k.l.unsigned_abs() as usize].get_or_insert(k);
    }
    for (l, slot) in by_abs.iter().enumerate() {
        if slot.is_none() {
            return Err(SchmidtError::MissingKernel(l as i32));
        }
    }

    let per_l: Vec<(Vec<f64>, Vec<DVector<Complex64>>, Vec<f64>)> = by_abs
        .par_iter()
        .map(|k| {
            let kernel = k.expect("coverage checked");
            // Takagi factorization K = sum_p sigma_p u_p u_p^T of the complex
            // symmetric kernel via the real symmetric embedding: K u* = sigma u
            // with u = x + iy is equivalent to [[A, B], [B, -A]] [x; y] =
            // sigma [x; y] where K = A + iB. Unlike a plain SVD this stays
            // exact when singular values are (near-)degenerate.
            let n = kernel.matrix.nrows();
            let mut embed = DMatrix::<f64>::zeros(2 * n, 2 * n);
            for i in 0..n {
                for j in 0..n {
                    let z = kernel.matrix[(i, j)];
                    embed[(i, j)] = z.re;
                    embed[(i, j + n)] = z.im;
                    embed[(i + n, j)] = z.im;
                    embed[(i + n, j + n)] = -z.re;
                }
            }
            let eig = embed.symmetric_eigen();
            let mut order: Vec<usize> = (0..2 * n).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
            let take = p_max.min(n);
            let mut lambdas = Vec::with_capacity(take);
            let mut profiles = Vec::with_capacity(take);
            let mut gammas = Vec::with_capacity(take);
            for p in 0..take {
                let idx = order[p];
                let sigma = eig.eigenvalues[idx].max(0.0);
                lambdas.push(sigma * sigma);
                let vec = eig.eigenvectors.column(idx);
                let mut col: DVector<Complex64> =
                    DVector::from_fn(n, |i, _| Complex64::new(vec[i], vec[i + n]));
                let norm = col.norm();
                if norm > 0.0 {
                    col /= Complex64::new(norm, 0.0);
                } else {
                    return Err(SchmidtError::SvdFailure(kernel.l));
                }
                // phase convention: real-positive at the modulus maximum
                let imax = col
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                let peak = col[imax];
                if peak.norm() > 0.0 {
                    let rot = peak.conj() / peak.norm();
                    col *= rot;
                }
                // residual kernel phase: u^H K u* = sigma e^{i gamma}
                let ku: Complex64 = {
                    let ustar = col.map(|z| z.conj());
                    let kus = &kernel.matrix * &ustar;
                    col.iter().zip(kus.iter()).map(|(a, b)| a.conj() * b).sum()
                };
                gammas.push(if sigma > 0.0 { ku.arg() } else { 0.0 });
                profiles.push(col);
            }
            // pad in case the kernel rank is below p_max
            while lambdas.len() < p_max {
                lambdas.push(0.0);
                profiles.push(DVector::from_element(
                    kernel.matrix.nrows(),
                    Complex64::new(0.0, 0.0),
                ));
                gammas.push(0.0);
            }
            Ok((lambdas, profiles, gammas))
        })
        .collect::<Result<_, SchmidtError>>()?;

    let mut lambdas = Vec::with_capacity(per_l.len());
    let mut profiles = Vec::with_capacity(per_l.len());
    let mut takagi_phases = Vec::with_capacity(per_l.len());
    for (lam, prof, gam) in per_l {
        lambdas.push(lam);
        profiles.push(prof);
        takagi_phases.push(gam);
    }
    let mut dec = SchmidtDecomposition {
        grid: grid.clone(),
        l_max,
        p_max,
        lambdas,
        profiles,
        takagi_phases,
    };
    dec.normalize();
    Ok(dec)
}

/// Gain-redistributed mode weights.
#[derive(Clone, Debug)]
pub struct GainedSpectrum {
    pub l_max: i32,
    pub p_max: usize,
    /// weights[|l|][p], normalized so the signed sum is 1.
    weights: Vec<Vec<f64>>,
    /// Parametric gain of the strongest mode, G0.
    pub g0: f64,
    /// Interaction strength G = G0 / sqrt(lambda_max).
    pub g: f64,
    /// Per-mode squeeze parameters g_lp = G sqrt(lambda_lp), by [|l|][p].
    squeeze: Vec<Vec<f64>>,
}

impl GainedSpectrum {
    pub fn weight(&self, l: i32, p: usize) -> f64 {
        self.weights[l.unsigned_abs() as usize][p]
    }

    /// Squeeze parameter of the twin pair (l, p) <-> (-l, p).
    pub fn squeeze(&self, l: i32, p: usize) -> f64 {
        self.squeeze[l.unsigned_abs() as usize][p]
    }

    /// OAM marginal Lambda_l = sum_p Lambda_lp (signed l).
    pub fn marginal_l(&self, l: i32) -> f64 {
        self.weights[l.unsigned_abs() as usize].iter().sum()
    }

    /// Radial marginal Lambda_p = sum over signed l.
    pub fn marginal_p(&self, p: usize) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(l, row)| if l == 0 { row[p] } else { 2.0 * row[p] })
            .sum()
    }

    pub fn signed_modes(&self) -> impl Iterator<Item = (i32, usize, f64)> + '_ {
        (-self.l_max..=self.l_max)
            .flat_map(move |l| (0..self.p_max).map(move |p| (l, p, self.weight(l, p))))
    }

    /// The strongest signed mode (l, p) and its weight; ties resolve to the
    /// smallest |l|, then sign +, then smallest p.
    pub fn argmax(&self) -> (i32, usize, f64) {
        let mut best = (0i32, 0usize, f64::MIN);
        for l in 0..=self.l_max {
            for p in 0..self.p_max {
                let w = self.weights[l as usize][p];
                if w > best.2 {
                    best = (l, p, w);
                }
            }
        }
        best
    }
}

/// log(sinh^2 x), stable for large x.
fn log_sinh_sq(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else if x < 20.0 {
        2.0 * x.sinh().ln()
    } else {
        // sinh x = e^x (1 - e^{-2x}) / 2
        2.0 * (x + (-(-2.0 * x).exp()).ln_1p() - std::f64::consts::LN_2)
    }
}

/// Apply the high-gain redistribution Lambda = sinh^2(G sqrt(lambda)) / norm,
/// with G = G0 / sqrt(lambda_max). Computed in log space so arguments beyond
/// ~20 do not overflow.
pub fn redistribute(dec: &SchmidtDecomposition, g0: f64) -> GainedSpectrum {
    let lambda_max = dec.lambda_max();
    let g = if lambda_max > 0.0 {
        g0 / lambda_max.sqrt()
    } else {
        0.0
    };

    let squeeze: Vec<Vec<f64>> = (0..=dec.l_max)
        .map(|l| {
            (0..dec.p_max)
                .map(|p| g * dec.lambda(l, p).sqrt())
                .collect()
        })
        .collect();

    if g0 == 0.0 {
        // low-gain limit: weights equal the eigenvalues
        let weights = (0..=dec.l_max)
            .map(|l| (0..dec.p_max).map(|p| dec.lambda(l, p)).collect())
            .collect();
        return GainedSpectrum {
            l_max: dec.l_max,
            p_max: dec.p_max,
            weights,
            g0,
            g,
            squeeze,
        };
    }

    let logs: Vec<Vec<f64>> = squeeze
        .iter()
        .map(|row| row.iter().map(|&x| log_sinh_sq(x)).collect())
        .collect();
    let m = logs
        .iter()
        .flat_map(|r| r.iter().cloned())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<Vec<f64>> = logs
        .iter()
        .map(|row| row.iter().map(|&v| (v - m).exp()).collect())
        .collect();
    let total: f64 = weights
        .iter()
        .enumerate()
        .map(|(l, row)| (if l == 0 { 1.0 } else { 2.0 }) * row.iter().sum::<f64>())
        .sum();
    for row in &mut weights {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    GainedSpectrum {
        l_max: dec.l_max,
        p_max: dec.p_max,
        weights,
        g0,
        g,
        squeeze,
    }
}

/// Effective mode counts: inverse participation ratios of the full weights
/// and of the OAM marginals.
#[derive(Clone, Copy, Debug)]
pub struct ModeCounts {
    pub k: f64,
    pub k_oam: f64,
}

pub fn mode_counts(spec: &GainedSpectrum) -> ModeCounts {
    let sum_sq: f64 = spec.signed_modes().map(|(_, _, w)| w * w).sum();
    let sum_l_sq: f64 = (-spec.l_max..=spec.l_max)
        .map(|l| {
            let m = spec.marginal_l(l);
            m * m
        })
        .sum();
    ModeCounts {
        k: 1.0 / sum_sq,
        k_oam: 1.0 / sum_l_sq,
    }
}

/// Radial mean-intensity profile I(theta) = sum Lambda_lp |u_lp(theta)|^2 /
/// theta, normalized to unit integral over theta dtheta dphi. The full 2D
/// field is independent of phi by construction.
pub fn mean_intensity_radial(dec: &SchmidtDecomposition, spec: &GainedSpectrum) -> Vec<f64> {
    let grid = &dec.grid;
    let n = grid.theta.len();
    let mut out = vec![0.0; n];
    for (l, p, w) in spec.signed_modes() {
        let prof = dec.profile(l, p);
        for i in 0..n {
            out[i] += w * prof[i].norm_sqr() / grid.theta[i];
        }
    }
    let integral: f64 = out
        .iter()
        .enumerate()
        .map(|(i, &v)| v * grid.theta[i] * grid.d_theta * 2.0 * std::f64::consts::PI)
        .sum();
    if integral > 0.0 {
        for v in &mut out {
            *v /= integral;
        }
    }
    out
}

/// Mean intensity on the full polar grid (constant across phi).
pub fn mean_intensity(dec: &SchmidtDecomposition, spec: &GainedSpectrum) -> DMatrix<f64> {
    let radial = mean_intensity_radial(dec, spec);
    let n_phi = dec.grid.phi.len();
    DMatrix::from_fn(radial.len(), n_phi, |i, _| radial[i])
}
