//! Small deterministic Levenberg-Marquardt solver for the handful of
//! low-dimensional nonlinear fits in this crate (azimuthal covariance model,
//! gain-vs-power law). Jacobians by forward differences.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("no convergence after {MAX_ITERATIONS} Levenberg-Marquardt iterations")]
    NoConvergence,
    #[error("singular normal equations (ill-conditioned model, too many parameters?)")]
    Singular,
    #[error("{0}")]
    BadInput(String),
}

/// Minimize ||r(params)||^2 starting from `init`. The residual closure maps
/// parameters to per-point residuals.
pub fn levenberg_marquardt<F>(init: &[f64], residuals: F) -> Result<Vec<f64>, FitError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = init.len();
    let mut params = init.to_vec();
    let mut r = DVector::from_vec(residuals(&params));
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;

    for _ in 0..MAX_ITERATIONS {
        // forward-difference Jacobian
        let m = r.len();
        let mut jac = DMatrix::zeros(m, n);
        for k in 0..n {
            let h = 1e-7 * params[k].abs().max(1e-7);
            let mut bumped = params.clone();
            bumped[k] += h;
            let rb = residuals(&bumped);
            for i in 0..m {
                jac[(i, k)] = (rb[i] - r[i]) / h;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;

        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj.clone();
            for k in 0..n {
                damped[(k, k)] += lambda * (jtj[(k, k)].abs().max(1e-12));
            }
            let step = match damped.lu().solve(&(-&jtr)) {
                Some(s) => s,
                None => return Err(FitError::Singular),
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            let rt = DVector::from_vec(residuals(&trial));
            let trial_cost = rt.norm_squared();
            if trial_cost < cost {
                let step_norm = step.norm();
                params = trial;
                r = rt;
                cost = trial_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if step_norm < STEP_TOLERANCE * (1.0 + DVector::from_vec(params.clone()).norm()) {
                    return Ok(params);
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                // stuck in a flat region: accept the current point
                return Ok(params);
            }
        }
        if !improved {
            return Ok(params);
        }
    }
    Err(FitError::NoConvergence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fits_exponential_decay() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let truth = [2.5, 0.7];
        let data: Vec<f64> = xs
            .iter()
            .map(|&x| truth[0] * (-truth[1] * x).exp())
            .collect();
        let fit = levenberg_marquardt(&[1.0, 1.0], |p| {
            xs.iter()
                .zip(&data)
                .map(|(&x, &y)| p[0] * (-p[1] * x).exp() - y)
                .collect()
        })
        .unwrap();
        assert_relative_eq!(fit[0], truth[0], max_relative = 1e-6);
        assert_relative_eq!(fit[1], truth[1], max_relative = 1e-6);
    }

    #[test]
    fn exact_fit_on_linear_model() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let data: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let fit = levenberg_marquardt(&[0.0, 0.0], |p| {
            xs.iter()
                .zip(&data)
                .map(|(&x, &y)| p[0] * x + p[1] - y)
                .collect()
        })
        .unwrap();
        assert_relative_eq!(fit[0], 3.0, epsilon = 1e-8);
        assert_relative_eq!(fit[1], -1.0, epsilon = 1e-8);
    }
}
