//! Target posteriors: the [`Posterior`] trait and generic evaluators for the
//! unnormalized log-density and its derivative tensors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::LN_SQRT_2PI;
use crate::tensor::DerivTensor;

/// A model parameter `θ ∈ R^d`.
pub type ParameterVector = DVector<f64>;

/// A Bayesian model `π(θ) L(θ; y)` known up to its normalizing constant.
///
/// Implementations return `-inf` (never NaN, never panic) outside the
/// support. Derivative hooks return `None` when no closed form exists, in
/// which case [`posterior_derivatives`] falls back to finite differences.
pub trait Posterior: Send + Sync {
    fn dim(&self) -> usize;

    fn log_prior(&self, theta: &[f64]) -> f64;

    fn log_lik(&self, theta: &[f64]) -> f64;

    fn in_support(&self, _theta: &[f64]) -> bool {
        true
    }

    fn log_lik_derivative(&self, _theta: &[f64], _order: usize) -> Option<DerivTensor> {
        None
    }

    fn log_prior_derivative(&self, _theta: &[f64], _order: usize) -> Option<DerivTensor> {
        None
    }

    fn column_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|j| format!("theta_{j}")).collect()
    }

    /// `log π(θ) + ℓ(θ)` without dimension checks.
    fn log_density(&self, theta: &[f64]) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        self.log_prior(theta) + self.log_lik(theta)
    }
}

impl<P: Posterior + ?Sized> Posterior for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        (**self).log_prior(theta)
    }
    fn log_lik(&self, theta: &[f64]) -> f64 {
        (**self).log_lik(theta)
    }
    fn in_support(&self, theta: &[f64]) -> bool {
        (**self).in_support(theta)
    }
    fn log_lik_derivative(&self, theta: &[f64], order: usize) -> Option<DerivTensor> {
        (**self).log_lik_derivative(theta, order)
    }
    fn log_prior_derivative(&self, theta: &[f64], order: usize) -> Option<DerivTensor> {
        (**self).log_prior_derivative(theta, order)
    }
    fn column_names(&self) -> Vec<String> {
        (**self).column_names()
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
}

fn check_dim(model: &dyn Posterior, theta: &[f64]) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(Error::invalid(format!(
            "parameter has dimension {}, model expects {}",
            theta.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// `log π(θ) + ℓ(θ)`, `-inf` off the support.
pub fn log_unnorm_posterior(model: &dyn Posterior, theta: &[f64]) -> Result<f64> {
    check_dim(model, theta)?;
    let v = model.log_density(theta);
    if v.is_nan() {
        return Err(Error::Evaluation { at: theta.to_vec() });
    }
    Ok(v)
}

/// Independent Gaussian prior `N(mean_j, var_j)` on each coordinate.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::invalid("prior mean and variance lengths differ"));
        }
        if var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("prior variances must be positive and finite"));
        }
        Ok(Self { mean, var })
    }

    pub fn isotropic(d: usize, mean: f64, var: f64) -> Result<Self> {
        Self::new(vec![mean; d], vec![var; d])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(t, (m, v))| -0.5 * (t - m) * (t - m) / v - 0.5 * v.ln() - LN_SQRT_2PI)
            .sum()
    }

    /// Analytic derivative tensor; orders above two vanish.
    pub fn derivative(&self, theta: &[f64], order: usize) -> DerivTensor {
        let d = self.dim();
        let mut t = DerivTensor::zeros(d, order);
        match order {
            1 => {
                for j in 0..d {
                    t.set(&[j], -(theta[j] - self.mean[j]) / self.var[j]);
                }
            }
            2 => {
                for j in 0..d {
                    t.set(&[j, j], -1.0 / self.var[j]);
                }
            }
            _ => {}
        }
        t
    }

    pub fn precision_diag(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.var.iter().map(|v| 1.0 / v))
    }
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type TensorFn = Arc<dyn Fn(&[f64], usize) -> Option<DerivTensor> + Send + Sync>;
type SupportFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A posterior assembled from closures, for models without GLM structure.
#[derive(Clone)]
pub struct FnModel {
    dim: usize,
    log_prior: ScalarFn,
    log_lik: ScalarFn,
    support: Option<SupportFn>,
    lik_deriv: Option<TensorFn>,
    prior_deriv: Option<TensorFn>,
}

impl FnModel {
    pub fn new(
        dim: usize,
        log_prior: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        log_lik: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            log_prior: Arc::new(log_prior),
            log_lik: Arc::new(log_lik),
            support: None,
            lik_deriv: None,
            prior_deriv: None,
        }
    }

    pub fn with_support(mut self, f: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.support = Some(Arc::new(f));
        self
    }

    pub fn with_lik_derivatives(
        mut self,
        f: impl Fn(&[f64], usize) -> Option<DerivTensor> + Send + Sync + 'static,
    ) -> Self {
        self.lik_deriv = Some(Arc::new(f));
        self
    }

    pub fn with_prior_derivatives(
        mut self,
        f: impl Fn(&[f64], usize) -> Option<DerivTensor> + Send + Sync + 'static,
    ) -> Self {
        self.prior_deriv = Some(Arc::new(f));
        self
    }
}

impl Posterior for FnModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        (self.log_prior)(theta)
    }

    fn log_lik(&self, theta: &[f64]) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        (self.log_lik)(theta)
    }

    fn in_support(&self, theta: &[f64]) -> bool {
        self.support.as_ref().is_none_or(|s| s(theta))
    }

    fn log_lik_derivative(&self, theta: &[f64], order: usize) -> Option<DerivTensor> {
        self.lik_deriv.as_ref().and_then(|f| f(theta, order))
    }

    fn log_prior_derivative(&self, theta: &[f64], order: usize) -> Option<DerivTensor> {
        self.prior_deriv.as_ref().and_then(|f| f(theta, order))
    }
}

/// Relative step used for central-difference gradients.
pub const FD_GRAD_STEP: f64 = 1e-5;
/// Relative step used for finite-difference Hessians.
pub const FD_HESS_STEP: f64 = 1e-4;
const FD_THIRD_STEP: f64 = 2e-3;
const FD_FOURTH_STEP: f64 = 5e-3;

/// Derivative tensor of `log π(θ) + ℓ(θ)` of the given order (1 to 4).
///
/// Uses the model's analytic hooks when both prior and likelihood provide
/// them, otherwise central finite differences. Orders three and four by
/// finite differences are only offered for `d ≤ 2`.
pub fn posterior_derivatives(
    model: &dyn Posterior,
    theta: &[f64],
    order: usize,
) -> Result<DerivTensor> {
    check_dim(model, theta)?;
    if !(1..=4).contains(&order) {
        return Err(Error::invalid(format!("derivative order {order} not in 1..=4")));
    }
    if let (Some(mut lik), Some(prior)) = (
        model.log_lik_derivative(theta, order),
        model.log_prior_derivative(theta, order),
    ) {
        lik.add_assign(&prior);
        return Ok(lik);
    }
    let f = |x: &[f64]| model.log_density(x);
    let d = model.dim();
    match order {
        1 => Ok(DerivTensor::from_vector(&fd_gradient(&f, theta))),
        2 => {
            // prefer differencing an analytic gradient when one exists
            if let (Some(_), Some(_)) = (
                model.log_lik_derivative(theta, 1),
                model.log_prior_derivative(theta, 1),
            ) {
                let grad = |x: &[f64]| {
                    let mut g = model.log_lik_derivative(x, 1).expect("checked");
                    g.add_assign(&model.log_prior_derivative(x, 1).expect("checked"));
                    g.to_vector()
                };
                Ok(DerivTensor::from_matrix(&fd_jacobian_sym(&grad, theta)))
            } else {
                Ok(DerivTensor::from_matrix(&fd_hessian(&f, theta)))
            }
        }
        _ if d > 2 => Err(Error::Unsupported(format!(
            "order-{order} derivatives need analytic evaluators when d = {d} > 2"
        ))),
        _ => Ok(fd_mixed_partials(&f, theta, order)),
    }
}

/// Gradient of `log π + ℓ`, analytic when available.
pub fn log_posterior_gradient(model: &dyn Posterior, theta: &[f64]) -> DVector<f64> {
    match (
        model.log_lik_derivative(theta, 1),
        model.log_prior_derivative(theta, 1),
    ) {
        (Some(mut a), Some(b)) => {
            a.add_assign(&b);
            a.to_vector()
        }
        _ => fd_gradient(&|x: &[f64]| model.log_density(x), theta),
    }
}

/// Hessian of `log π + ℓ`, analytic when available.
pub fn log_posterior_hessian(model: &dyn Posterior, theta: &[f64]) -> DMatrix<f64> {
    posterior_derivatives(model, theta, 2)
        .expect("order 2 is always available")
        .to_matrix()
}

fn step(rel: f64, x: f64) -> f64 {
    rel * (1.0 + x.abs())
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, theta: &[f64]) -> DVector<f64> {
    let mut x = theta.to_vec();
    DVector::from_iterator(
        theta.len(),
        (0..theta.len()).map(|j| {
            let h = step(FD_GRAD_STEP, theta[j]);
            x[j] = theta[j] + h;
            let up = f(&x);
            x[j] = theta[j] - h;
            let down = f(&x);
            x[j] = theta[j];
            (up - down) / (2.0 * h)
        }),
    )
}

fn fd_jacobian_sym(g: &dyn Fn(&[f64]) -> DVector<f64>, theta: &[f64]) -> DMatrix<f64> {
    let d = theta.len();
    let mut x = theta.to_vec();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let h = step(FD_HESS_STEP, theta[j]);
        x[j] = theta[j] + h;
        let up = g(&x);
        x[j] = theta[j] - h;
        let down = g(&x);
        x[j] = theta[j];
        jac.set_column(j, &((up - down) / (2.0 * h)));
    }
    (&jac + jac.transpose()) * 0.5
}

pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, theta: &[f64]) -> DMatrix<f64> {
    let d = theta.len();
    let mut x = theta.to_vec();
    let f0 = f(theta);
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let hi = step(FD_HESS_STEP, theta[i]);
        x[i] = theta[i] + hi;
        let fp = f(&x);
        x[i] = theta[i] - hi;
        let fm = f(&x);
        x[i] = theta[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = step(FD_HESS_STEP, theta[j]);
            let mut eval = |si: f64, sj: f64| {
                x[i] = theta[i] + si * hi;
                x[j] = theta[j] + sj * hj;
                let v = f(&x);
                x[i] = theta[i];
                x[j] = theta[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Composition of central differences along each index of the multi-index.
fn fd_mixed_partials(f: &dyn Fn(&[f64]) -> f64, theta: &[f64], order: usize) -> DerivTensor {
    let d = theta.len();
    let rel = if order == 3 { FD_THIRD_STEP } else { FD_FOURTH_STEP };
    let h: Vec<f64> = theta.iter().map(|&t| step(rel, t)).collect();
    let mut out = DerivTensor::zeros(d, order);
    let mut idx = vec![0usize; order];
    let total = d.pow(order as u32);
    let mut cache = std::collections::HashMap::new();
    for flat in 0..total {
        let mut rem = flat;
        for slot in idx.iter_mut().rev() {
            *slot = rem % d;
            rem /= d;
        }
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        if let Some(&v) = cache.get(&sorted) {
            out.set(&idx, v);
            continue;
        }
        let mut acc = 0.0;
        for signs in 0..(1u32 << order) {
            let mut x = theta.to_vec();
            let mut sign = 1.0;
            for (k, &axis) in sorted.iter().enumerate() {
                if signs & (1 << k) != 0 {
                    x[axis] -= h[axis];
                    sign = -sign;
                } else {
                    x[axis] += h[axis];
                }
            }
            acc += sign * f(&x);
        }
        let denom: f64 = sorted.iter().map(|&a| 2.0 * h[a]).product();
        let v = acc / denom;
        cache.insert(sorted, v);
        out.set(&idx, v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::norm_logpdf;

    fn cubic_model() -> FnModel {
        // log density = -θ1^4/12 + θ1^3 θ2 / 6 - θ2^2 / 2
        FnModel::new(
            2,
            |_| 0.0,
            |t| -t[0].powi(4) / 12.0 + t[0].powi(3) * t[1] / 6.0 - t[1] * t[1] / 2.0,
        )
    }

    #[test]
    fn standard_normal_pair_at_mode() {
        let m = FnModel::new(1, |t| norm_logpdf(t[0]), |t| norm_logpdf(0.0 - t[0]));
        let v = log_unnorm_posterior(&m, &[0.0]).unwrap();
        assert_eq!(v, 2.0 * norm_logpdf(0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = cubic_model();
        assert!(matches!(
            log_unnorm_posterior(&m, &[0.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(posterior_derivatives(&m, &[0.0, 0.0], 5).is_err());
    }

    #[test]
    fn off_support_is_negative_infinity() {
        let m = FnModel::new(1, |t| -t[0], |t| t[0].ln()).with_support(|t| t[0] > 0.0);
        assert_eq!(log_unnorm_posterior(&m, &[-1.0]).unwrap(), f64::NEG_INFINITY);
        assert!(log_unnorm_posterior(&m, &[2.0]).unwrap().is_finite());
    }

    #[test]
    fn finite_difference_tensors_match_hand_derivatives() {
        let m = cubic_model();
        let t = [0.7, -0.4];
        let g = posterior_derivatives(&m, &t, 1).unwrap();
        let g_exact = [-t[0].powi(3) / 3.0 + 0.5 * t[0] * t[0] * t[1], t[0].powi(3) / 6.0 - t[1]];
        for j in 0..2 {
            assert!((g.get(&[j]) - g_exact[j]).abs() < 1e-8);
        }
        let h = posterior_derivatives(&m, &t, 2).unwrap();
        assert!((h.get(&[0, 1]) - 0.5 * t[0] * t[0]).abs() < 1e-5);
        let d3 = posterior_derivatives(&m, &t, 3).unwrap();
        // ∂111 = -2θ1 + θ2, ∂112 = θ1, ∂122 = 0
        assert!((d3.get(&[0, 0, 0]) - (-2.0 * t[0] + t[1])).abs() < 1e-4);
        assert!((d3.get(&[1, 0, 0]) - t[0]).abs() < 1e-4);
        assert!(d3.get(&[0, 1, 1]).abs() < 1e-4);
        assert!(d3.symmetry_defect() == 0.0);
        let d4 = posterior_derivatives(&m, &t, 4).unwrap();
        assert!((d4.get(&[0, 0, 0, 0]) + 2.0).abs() < 1e-3);
        assert!(d4.get(&[1, 1, 1, 1]).abs() < 1e-3);
    }

    #[test]
    fn high_order_fd_refused_above_two_dimensions() {
        let m = FnModel::new(3, |_| 0.0, |t| -t.iter().map(|x| x * x).sum::<f64>());
        assert!(matches!(
            posterior_derivatives(&m, &[0.0; 3], 3),
            Err(Error::Unsupported(_))
        ));
        assert!(posterior_derivatives(&m, &[0.0; 3], 2).is_ok());
    }

    #[test]
    fn shifting_the_prior_shifts_the_output() {
        let base = FnModel::new(1, |t| -t[0] * t[0], |t| t[0]);
        let shifted = FnModel::new(1, |t| -t[0] * t[0] + 3.25, |t| t[0]);
        for &x in &[-2.0, 0.1, 5.0] {
            let a = log_unnorm_posterior(&base, &[x]).unwrap();
            let b = log_unnorm_posterior(&shifted, &[x]).unwrap();
            assert!((b - a - 3.25).abs() < 1e-12);
        }
    }
}
