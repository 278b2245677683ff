use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{cholesky_sym, GaussianApproximation, SymmetricApproximation};
use crate::error::{Error, Result};
use crate::model::{log_posterior_gradient, log_posterior_hessian, Posterior};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LaplaceOptions {
    /// Stop when `‖∇‖ ≤ grad_tol · (1 + ‖θ‖)`, or when the Newton decrement
    /// falls to the rounding level of the log density.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 200,
            armijo: 1e-4,
        }
    }
}

/// Posterior mode by damped Newton ascent with backtracking.
///
/// Where the negative Hessian is not positive definite the step falls back
/// to the (scaled) gradient direction.
pub fn map_estimate(
    model: &dyn Posterior,
    init: &[f64],
    opts: &LaplaceOptions,
) -> Result<DVector<f64>> {
    if init.len() != model.dim() {
        return Err(Error::invalid("initial point has the wrong dimension"));
    }
    let mut theta = DVector::from_column_slice(init);
    let mut f = model.log_density(theta.as_slice());
    if !f.is_finite() {
        return Err(Error::invalid("initial point is outside the support"));
    }
    let mut grad_norm = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let g = log_posterior_gradient(model, theta.as_slice());
        grad_norm = g.norm();
        if grad_norm <= opts.grad_tol * (1.0 + theta.norm()) {
            return Ok(theta);
        }
        let neg_h = -log_posterior_hessian(model, theta.as_slice());
        let (dir, neg_h_pd) = match cholesky_sym(&neg_h) {
            Some(ch) => (ch.solve(&g), true),
            None => (&g / g.norm().max(1.0), false),
        };
        let slope = g.dot(&dir);
        // Newton decrement at the roundoff level of the log density
        if neg_h_pd && slope <= 1e-15 * (1.0 + f.abs()) {
            return Ok(theta);
        }
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &theta + &dir * step;
            let fc = model.log_density(cand.as_slice());
            if fc.is_finite() && fc >= f + opts.armijo * step * slope {
                theta = cand;
                f = fc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            // no ascent possible along the search direction: accept the
            // point if the gradient is at the roundoff floor of the density
            let floor = 1e-6 * (1.0 + theta.norm());
            if grad_norm <= floor {
                return Ok(theta);
            }
            break;
        }
    }
    let g = log_posterior_gradient(model, theta.as_slice());
    if g.norm() <= opts.grad_tol * (1.0 + theta.norm()) {
        return Ok(theta);
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        grad_norm: grad_norm.min(g.norm()),
        last: theta.as_slice().to_vec(),
    })
}

/// Gaussian at the posterior mode with covariance `J⁻¹`,
/// `J = -(ℓ⁽²⁾ + log π⁽²⁾)` at the mode.
pub fn fit_laplace(
    model: &dyn Posterior,
    init: &[f64],
    opts: &LaplaceOptions,
) -> Result<SymmetricApproximation> {
    let mode = map_estimate(model, init, opts)?;
    let precision = -log_posterior_hessian(model, mode.as_slice());
    let gauss = GaussianApproximation::from_precision(mode, &precision)?;
    Ok(SymmetricApproximation::Laplace(gauss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{Family, GlmModel};
    use crate::model::{FnModel, GaussianPrior};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conjugate_gaussian_is_exact() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, -1.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.3, -1.2, 2.5]);
        let prior = GaussianPrior::new(vec![0.0, 1.0], vec![2.0, 0.5]).unwrap();
        let m = GlmModel::new(x.clone(), y.clone(), Family::GaussianIdentity, prior).unwrap();
        let approx = fit_laplace(&m, &[0.0, 0.0], &LaplaceOptions::default()).unwrap();
        let prec = x.transpose() * &x + DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let cov = prec.clone().try_inverse().unwrap();
        let mean = &cov * (x.transpose() * &y + DVector::from_vec(vec![0.0, 2.0]));
        assert!((approx.center() - &mean).amax() < 1e-10);
        assert!((approx.gaussian().covariance() - &cov).amax() < 1e-10);
    }

    #[test]
    fn poisson_gamma_log_rate_mode_solves_stationarity() {
        // y = 3 ~ Poisson(e^θ), e^θ ~ Gamma(2, 1): log posterior
        // (a + y)θ - (b + 1)e^θ up to constants, with the log-scale Jacobian
        let (a, b, y) = (2.0, 1.0, 3.0);
        let m = FnModel::new(
            1,
            move |t: &[f64]| a * t[0] - b * t[0].exp(),
            move |t: &[f64]| y * t[0] - t[0].exp(),
        );
        let approx = fit_laplace(&m, &[0.0], &LaplaceOptions::default()).unwrap();
        // bisection on the stationarity equation (a + y) - (b + 1) e^θ = 0
        let (mut lo, mut hi) = (-5.0f64, 5.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (a + y) - (b + 1.0) * mid.exp() > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((approx.center()[0] - 0.5 * (lo + hi)).abs() < 1e-9);
        // J = (b + 1) e^θ̃ = a + y
        let var = approx.gaussian().covariance()[(0, 0)];
        assert!((var - 1.0 / (a + y)).abs() < 1e-6);
    }

    #[test]
    fn logistic_map_agrees_with_grid_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = DMatrix::from_fn(10, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        let m = GlmModel::new(x, y, Family::BernoulliLogit, GaussianPrior::isotropic(2, 0.0, 4.0).unwrap())
            .unwrap();
        let approx = fit_laplace(&m, &[0.0, 0.0], &LaplaceOptions::default()).unwrap();
        let (lo, hi, n) = (-4.0, 4.0, 400);
        let cell = (hi - lo) / (n - 1) as f64;
        let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
        for i in 0..n {
            for j in 0..n {
                let t = [lo + i as f64 * cell, lo + j as f64 * cell];
                let v = m.log_density(&t);
                if v > best.0 {
                    best = (v, t);
                }
            }
        }
        for k in 0..2 {
            assert!((approx.center()[k] - best.1[k]).abs() <= cell);
        }
        let g = log_posterior_gradient(&m, approx.center().as_slice());
        assert!(g.norm() <= 1e-8 * (1.0 + approx.center().norm()));
        let hess = log_posterior_hessian(&m, approx.center().as_slice());
        let inv = (-hess).try_inverse().unwrap();
        let cov = approx.gaussian().covariance();
        assert!((&cov - &inv).amax() <= 1e-8 * inv.amax());
    }

    #[test]
    fn unbounded_posterior_reports_non_convergence() {
        // log density increases without bound: no mode exists
        let m = FnModel::new(1, |t: &[f64]| t[0], |_| 0.0)
            .with_prior_derivatives(|_, k| {
                Some(crate::tensor::DerivTensor::from_vec(1, k, vec![if k == 1 { 1.0 } else { 0.0 }]))
            })
            .with_lik_derivatives(|_, k| Some(crate::tensor::DerivTensor::zeros(1, k)));
        let opts = LaplaceOptions {
            max_iter: 20,
            ..Default::default()
        };
        assert!(matches!(
            fit_laplace(&m, &[0.0], &opts),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn saddle_point_reports_indefinite_curvature() {
        // stationary point of a convex function: gradient vanishes but the
        // negative Hessian is negative definite
        let m = FnModel::new(1, |t: &[f64]| t[0] * t[0], |_| 0.0);
        assert!(matches!(
            fit_laplace(&m, &[0.0], &LaplaceOptions::default()),
            Err(Error::IndefiniteCurvature { .. })
        ));
    }
}
