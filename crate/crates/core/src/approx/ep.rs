//! Gaussian expectation propagation for GLMs with one scalar site per
//! observation on its linear predictor `η_i = x_iᵀθ`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::quadrature::gauss_hermite;
use super::{cholesky_sym, GaussianApproximation, SymmetricApproximation};
use crate::error::{Error, Result};
use crate::glm::{Family, GlmModel};
use crate::math::inv_mills;

const GH_POINTS: usize = 64;

fn gh_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(GH_POINTS))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EpOptions {
    /// Weight on the freshly matched site; 1 means undamped.
    pub damping: f64,
    /// Convergence when every site parameter moves less than
    /// `tol · (1 + |value|)` over a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for EpOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-8,
            max_sweeps: 500,
        }
    }
}

/// Site parameters in natural form: site `i` contributes
/// `exp(-½ τ_i η_i² + ν_i η_i)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpSiteSet {
    pub site_precisions: Vec<f64>,
    pub site_shifts: Vec<f64>,
    pub global: GaussianApproximation,
}

#[derive(Debug, Clone)]
pub struct GepFit {
    pub approximation: SymmetricApproximation,
    pub sites: EpSiteSet,
    pub sweeps: usize,
    /// Site updates whose precision was clipped at zero.
    pub clipped: usize,
    /// Site updates skipped because the cavity was improper.
    pub skipped: usize,
}

/// Mean and variance of `N(η; m, v) · exp(g(y, η))` normalized.
pub(crate) fn tilted_moments(
    model: &GlmModel,
    i: usize,
    cav_mean: f64,
    cav_var: f64,
) -> Option<(f64, f64)> {
    let y = model.response()[i];
    match model.family() {
        Family::GaussianIdentity => {
            let s2 = model.dispersion();
            let v = 1.0 / (1.0 / cav_var + 1.0 / s2);
            Some((v * (cav_mean / cav_var + y / s2), v))
        }
        Family::BernoulliProbit => {
            let s = if y > 0.5 { 1.0 } else { -1.0 };
            let denom = (1.0 + cav_var).sqrt();
            let z = s * cav_mean / denom;
            let lam = inv_mills(z);
            let mean = cav_mean + s * cav_var * lam / denom;
            let var = cav_var - cav_var * cav_var * lam * (z + lam) / (1.0 + cav_var);
            Some((mean, var))
        }
        Family::PoissonLog | Family::BernoulliLogit => {
            adaptive_gh_moments(model, i, cav_mean, cav_var)
        }
    }
}

/// Gauss–Hermite on the tilted density, with the rule centered at the
/// tilted mode and scaled by its curvature.
fn adaptive_gh_moments(model: &GlmModel, i: usize, m: f64, v: f64) -> Option<(f64, f64)> {
    let log_tilted = |e: f64| -0.5 * (e - m) * (e - m) / v + model.obs_log_lik(i, e);
    // Newton on the concave log tilted density
    let mut mode = m;
    for _ in 0..100 {
        let g = -(mode - m) / v + model.obs_derivative(i, mode, 1)?;
        let h = -1.0 / v + model.obs_derivative(i, mode, 2)?;
        let mut step = -g / h;
        let f0 = log_tilted(mode);
        while log_tilted(mode + step) < f0 - 1e-12 * f0.abs() && step.abs() > 1e-14 {
            step *= 0.5;
        }
        mode += step;
        if step.abs() < 1e-12 * (1.0 + mode.abs()) {
            break;
        }
    }
    let curv = 1.0 / v - model.obs_derivative(i, mode, 2)?;
    let scale = (2.0 / curv).sqrt();
    let (nodes, weights) = gh_rule();
    let mut logw = Vec::with_capacity(nodes.len());
    let mut pts = Vec::with_capacity(nodes.len());
    for (&x, &w) in nodes.iter().zip(weights) {
        let e = mode + scale * x;
        // importance ratio against the Gaussian kernel exp(-x²)
        logw.push(w.ln() + log_tilted(e) + x * x);
        pts.push(e - mode);
    }
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (lw, u) in logw.iter().zip(&pts) {
        let w = (lw - top).exp();
        z += w;
        s1 += w * u;
        s2 += w * u * u;
    }
    let mu = s1 / z;
    let var = s2 / z - mu * mu;
    (var > 0.0 && var.is_finite()).then_some((mode + mu, var))
}

/// Global Gaussian implied by the prior and the sites, from scratch.
pub fn recompute_global(
    model: &GlmModel,
    site_precisions: &[f64],
    site_shifts: &[f64],
) -> Result<GaussianApproximation> {
    let (precision, shift) = natural_params(model, site_precisions, site_shifts);
    let chol = cholesky_sym(&precision).ok_or_else(|| {
        Error::State("EP global precision is not positive definite".to_string())
    })?;
    let mean = chol.solve(&shift);
    GaussianApproximation::from_covariance(mean, &chol.inverse())
}

fn natural_params(model: &GlmModel, tau: &[f64], nu: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let x = model.design();
    let prior = model.prior();
    let mut precision = DMatrix::from_diagonal(&prior.precision_diag());
    let mut shift = DVector::from_iterator(
        prior.dim(),
        prior.mean.iter().zip(&prior.var).map(|(m, v)| m / v),
    );
    let mut xw = x.clone();
    for i in 0..x.nrows() {
        xw.row_mut(i).scale_mut(tau[i]);
    }
    precision += x.transpose() * xw;
    shift += x.transpose() * DVector::from_column_slice(nu);
    (precision, shift)
}

/// Sequential damped EP in ascending site order.
pub fn fit_gep(model: &GlmModel, opts: &EpOptions) -> Result<GepFit> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::invalid("EP damping must lie in (0, 1]"));
    }
    let n = model.n_obs();
    let x = model.design();
    let mut tau = vec![0.0; n];
    let mut nu = vec![0.0; n];
    let (precision, shift) = natural_params(model, &tau, &nu);
    let chol = cholesky_sym(&precision).expect("prior precision is diagonal positive");
    let mut cov = chol.inverse();
    let mut mean = chol.solve(&shift);
    let mut shift = shift;
    let mut clipped = 0;
    let mut skipped = 0;
    let mut max_change = f64::INFINITY;

    for sweep in 1..=opts.max_sweeps {
        max_change = 0.0f64;
        for i in 0..n {
            let xi = x.row(i).transpose();
            let sx = &cov * &xi;
            let v = xi.dot(&sx);
            let m = xi.dot(&mean);
            let cav_prec = 1.0 / v - tau[i];
            if cav_prec <= 0.0 {
                skipped += 1;
                continue;
            }
            let cav_shift = m / v - nu[i];
            let Some((tm, tv)) = tilted_moments(model, i, cav_shift / cav_prec, 1.0 / cav_prec)
            else {
                skipped += 1;
                continue;
            };
            let mut new_tau = 1.0 / tv - cav_prec;
            let new_nu = tm / tv - cav_shift;
            if new_tau < 0.0 {
                new_tau = 0.0;
                clipped += 1;
            }
            let upd_tau = (1.0 - opts.damping) * tau[i] + opts.damping * new_tau;
            let upd_nu = (1.0 - opts.damping) * nu[i] + opts.damping * new_nu;
            let d_tau = upd_tau - tau[i];
            let d_nu = upd_nu - nu[i];
            max_change = max_change
                .max(d_tau.abs() / (1.0 + tau[i].abs()))
                .max(d_nu.abs() / (1.0 + nu[i].abs()));
            tau[i] = upd_tau;
            nu[i] = upd_nu;
            // Sherman–Morrison rank-one update of the covariance
            let denom = 1.0 + d_tau * v;
            if denom <= 1e-12 {
                let g = recompute_global(model, &tau, &nu)?;
                cov = g.covariance();
                mean = g.mean().clone();
                shift = natural_params(model, &tau, &nu).1;
                continue;
            }
            cov -= (&sx * sx.transpose()) * (d_tau / denom);
            shift += &xi * d_nu;
            mean = &cov * &shift;
        }
        // refresh from scratch once per sweep to keep roundoff from drifting
        let global = recompute_global(model, &tau, &nu)?;
        cov = global.covariance();
        mean = global.mean().clone();
        shift = natural_params(model, &tau, &nu).1;
        if max_change < opts.tol {
            return Ok(GepFit {
                approximation: SymmetricApproximation::Gep(global.clone()),
                sites: EpSiteSet {
                    site_precisions: tau,
                    site_shifts: nu,
                    global,
                },
                sweeps: sweep,
                clipped,
                skipped,
            });
        }
    }
    let last = recompute_global(model, &tau, &nu)?;
    Err(Error::EpNonConvergence {
        sweeps: opts.max_sweeps,
        max_change,
        last: Box::new(last),
    })
}
