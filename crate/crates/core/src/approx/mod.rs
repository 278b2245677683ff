//! Symmetric approximations of a posterior: Laplace, full-rank Gaussian
//! variational Bayes, Gaussian expectation propagation and the fourth-order
//! semi-nonparametric (SNP) extension of the Laplace Gaussian.
//!
//! Every fitter returns a [`SymmetricApproximation`], a density that is
//! reflection-invariant about its [`center`](SymmetricApproximation::center)
//! and can be sampled exactly.

mod ep;
mod gvb;
mod laplace;
pub mod quadrature;
mod snp;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::LN_SQRT_2PI;

pub use ep::{fit_gep, recompute_global, EpOptions, EpSiteSet, GepFit};
pub use gvb::{fit_gvb, GvbFit, GvbOptions};
pub use laplace::{fit_laplace, map_estimate, LaplaceOptions};
pub use snp::{build_snp, gaussian_monomial_moment, SnpApproximation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxKind {
    Laplace,
    Gvb,
    Gep,
    Snp,
}

impl ApproxKind {
    pub fn name(self) -> &'static str {
        match self {
            ApproxKind::Laplace => "la",
            ApproxKind::Gvb => "gvb",
            ApproxKind::Gep => "gep",
            ApproxKind::Snp => "snp",
        }
    }
}

impl std::str::FromStr for ApproxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "la" | "laplace" => Ok(ApproxKind::Laplace),
            "gvb" => Ok(ApproxKind::Gvb),
            "gep" | "ep" => Ok(ApproxKind::Gep),
            "snp" => Ok(ApproxKind::Snp),
            other => Err(Error::Config(format!(
                "unknown approximation kind `{other}` (expected la, gvb, gep or snp)"
            ))),
        }
    }
}

/// `N(mean, L Lᵀ)`, stored through the lower Cholesky factor of the
/// covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianApproximation {
    mean: DVector<f64>,
    cov_factor: DMatrix<f64>,
    log_norm_const: f64,
}

impl GaussianApproximation {
    pub fn from_factor(mean: DVector<f64>, cov_factor: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov_factor.shape() != (d, d) {
            return Err(Error::invalid("covariance factor shape does not match the mean"));
        }
        let cov_factor = cov_factor.lower_triangle();
        let log_det_half: f64 = cov_factor.diagonal().iter().map(|v| v.abs().ln()).sum();
        if !log_det_half.is_finite() || cov_factor.diagonal().iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("covariance factor must have a positive diagonal"));
        }
        Ok(Self {
            mean,
            log_norm_const: -log_det_half - d as f64 * LN_SQRT_2PI,
            cov_factor,
        })
    }

    pub fn from_covariance(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let sym = (cov + cov.transpose()) * 0.5;
        let chol = Cholesky::new(sym).ok_or_else(|| Error::IndefiniteCurvature {
            at: mean.as_slice().to_vec(),
        })?;
        Self::from_factor(mean, chol.l())
    }

    pub fn from_precision(mean: DVector<f64>, precision: &DMatrix<f64>) -> Result<Self> {
        let chol = cholesky_sym(precision).ok_or_else(|| Error::IndefiniteCurvature {
            at: mean.as_slice().to_vec(),
        })?;
        Self::from_covariance(mean, &chol.inverse())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov_factor(&self) -> &DMatrix<f64> {
        &self.cov_factor
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_factor * self.cov_factor.transpose()
    }

    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(theta) - &self.mean;
        let z = self
            .cov_factor
            .solve_lower_triangular(&diff)
            .expect("positive diagonal");
        self.log_norm_const - 0.5 * z.norm_squared()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.cov_factor * z
    }
}

pub(crate) fn cholesky_sym(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new((m + m.transpose()) * 0.5)
}

/// A fitted density symmetric about its center.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SymmetricApproximation {
    Laplace(GaussianApproximation),
    Gvb(GaussianApproximation),
    Gep(GaussianApproximation),
    Snp(SnpApproximation),
}

impl SymmetricApproximation {
    pub fn kind(&self) -> ApproxKind {
        match self {
            SymmetricApproximation::Laplace(_) => ApproxKind::Laplace,
            SymmetricApproximation::Gvb(_) => ApproxKind::Gvb,
            SymmetricApproximation::Gep(_) => ApproxKind::Gep,
            SymmetricApproximation::Snp(_) => ApproxKind::Snp,
        }
    }

    pub fn dim(&self) -> usize {
        self.center().len()
    }

    /// The symmetry point `θ̂`.
    pub fn center(&self) -> &DVector<f64> {
        match self {
            SymmetricApproximation::Laplace(g)
            | SymmetricApproximation::Gvb(g)
            | SymmetricApproximation::Gep(g) => g.mean(),
            SymmetricApproximation::Snp(s) => s.mode(),
        }
    }

    /// The Gaussian part: the approximation itself, or the Laplace kernel of
    /// an SNP density.
    pub fn gaussian(&self) -> &GaussianApproximation {
        match self {
            SymmetricApproximation::Laplace(g)
            | SymmetricApproximation::Gvb(g)
            | SymmetricApproximation::Gep(g) => g,
            SymmetricApproximation::Snp(s) => s.kernel(),
        }
    }

    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        match self {
            SymmetricApproximation::Laplace(g)
            | SymmetricApproximation::Gvb(g)
            | SymmetricApproximation::Gep(g) => g.log_pdf(theta),
            SymmetricApproximation::Snp(s) => s.log_pdf(theta),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            SymmetricApproximation::Laplace(g)
            | SymmetricApproximation::Gvb(g)
            | SymmetricApproximation::Gep(g) => g.draw(rng),
            SymmetricApproximation::Snp(s) => s.draw(rng),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss2() -> GaussianApproximation {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        GaussianApproximation::from_covariance(DVector::from_vec(vec![0.5, -1.0]), &cov).unwrap()
    }

    #[test]
    fn gaussian_log_pdf_matches_closed_form() {
        let g = gauss2();
        let cov = g.covariance();
        let det = cov.determinant();
        let x = [1.0, 0.0];
        let diff = DVector::from_vec(vec![0.5, 1.0]);
        let q = (diff.transpose() * cov.try_inverse().unwrap() * &diff)[0];
        let expected = -0.5 * q - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln();
        assert!((g.log_pdf(&x) - expected).abs() < 1e-13);
    }

    #[test]
    fn precision_and_covariance_constructors_agree() {
        let g = gauss2();
        let prec = g.covariance().try_inverse().unwrap();
        let h = GaussianApproximation::from_precision(g.mean().clone(), &prec).unwrap();
        assert!((h.log_pdf(&[0.1, 0.2]) - g.log_pdf(&[0.1, 0.2])).abs() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianApproximation::from_covariance(g.mean().clone(), &bad),
            Err(Error::IndefiniteCurvature { .. })
        ));
    }

    #[test]
    fn json_round_trip_preserves_log_pdf() {
        let approx = SymmetricApproximation::Gep(gauss2());
        let back = SymmetricApproximation::from_json(&approx.to_json().unwrap()).unwrap();
        assert_eq!(back.kind(), ApproxKind::Gep);
        for x in [[0.0, 0.0], [3.0, -2.0], [-1.5, 4.0]] {
            assert!((back.log_pdf(&x) - approx.log_pdf(&x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn gaussian_draws_center_on_mean() {
        let g = gauss2();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..n {
            acc += g.draw(&mut rng);
        }
        acc /= n as f64;
        let cov = g.covariance();
        for j in 0..2 {
            let se = (cov[(j, j)] / n as f64).sqrt();
            assert!((acc[j] - g.mean()[j]).abs() < 4.0 * se);
        }
    }
}
