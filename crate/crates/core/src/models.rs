//! Bundled models: the substance-use Poisson regression, the exponential
//! rate family used for convergence rates, synthetic logistic regressions
//! and the low-dimensional battery on which the exact identities are checked.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::approx::{
    build_snp, fit_gep, fit_gvb, fit_laplace, ApproxKind, EpOptions, GvbOptions, LaplaceOptions,
    SymmetricApproximation,
};
use crate::error::{Error, Result};
use crate::glm::{Dataset, Family, GlmModel};
use crate::math::logistic;
use crate::model::{FnModel, GaussianPrior, Posterior};
use crate::seed::derive_seed;
use crate::skew::SkewSymmetricApproximation;
use crate::tensor::DerivTensor;

/// Raw substance-use survey counts: one row per combination of five
/// binary factors, each coded 1 for the level named by the column.
pub const SUBSTANCE_USE_CSV: &str = include_str!("../data/substance_use.csv");

const FACTORS: [&str; 5] = ["alcohol", "cigarettes", "marijuana", "male", "white"];

/// Poisson log-linear model for the substance-use counts with intercept,
/// the five main effects and all ten two-way interactions (`d = 16`), under
/// independent `N(0, prior_var)` priors.
///
/// Factors are indicators of alcohol = yes, cigarettes = yes,
/// marijuana = yes, gender = male and race = white. These are the
/// non-reference levels under alphabetical level ordering (`N < Y`,
/// `F < M`, `OTHER < WHITE`).
pub fn substance_use_model(prior_var: f64) -> Result<GlmModel> {
    let raw = Dataset::from_reader(SUBSTANCE_USE_CSV.as_bytes(), "count", false)?;
    let col = |name: &str| raw.column_names.iter().position(|c| c == name).expect("bundled column");
    let idx: Vec<usize> = FACTORS.iter().map(|f| col(f)).collect();
    let n = raw.n_obs();
    let mut names = vec!["(Intercept)".to_string()];
    names.extend(FACTORS.iter().map(|s| s.to_string()));
    for a in 0..5 {
        for b in a + 1..5 {
            names.push(format!("{}:{}", FACTORS[a], FACTORS[b]));
        }
    }
    let d = names.len();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let v: Vec<f64> = idx.iter().map(|&j| raw.predictors[(i, j)]).collect();
        x[(i, 0)] = 1.0;
        let mut k = 1;
        for &vj in &v {
            x[(i, k)] = vj;
            k += 1;
        }
        for a in 0..5 {
            for b in a + 1..5 {
                x[(i, k)] = v[a] * v[b];
                k += 1;
            }
        }
    }
    GlmModel::new(
        x,
        raw.responses,
        Family::PoissonLog,
        GaussianPrior::isotropic(d, 0.0, prior_var)?,
    )?
    .with_column_names(names)
}

/// `y_i ~ Exp(rate = e^θ)` with a `N(0, prior_var)` prior on the log-rate.
///
/// The log-likelihood `nθ - e^θ Σy` depends on the data only through
/// `(n, Σy)`; all its derivatives are available in closed form.
pub fn exponential_rate_model(y: &[f64], prior_var: f64) -> Result<FnModel> {
    if y.is_empty() || y.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid("exponential observations must be positive"));
    }
    let n = y.len() as f64;
    let s: f64 = y.iter().sum();
    let prior = GaussianPrior::isotropic(1, 0.0, prior_var)?;
    let prior_d = prior.clone();
    Ok(FnModel::new(
        1,
        move |t: &[f64]| prior.log_density(t),
        move |t: &[f64]| n * t[0] - t[0].exp() * s,
    )
    .with_prior_derivatives(move |t, k| Some(prior_d.derivative(t, k)))
    .with_lik_derivatives(move |t, k| {
        let v = match k {
            1 => n - t[0].exp() * s,
            _ => -t[0].exp() * s,
        };
        Some(DerivTensor::from_vec(1, k, vec![v]))
    }))
}

/// `n` draws from `Exp(e^θ0)`.
pub fn simulate_exponential<R: Rng + ?Sized>(n: usize, theta0: f64, rng: &mut R) -> Vec<f64> {
    let dist = Exp::new(theta0.exp()).expect("positive rate");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Logistic regression with an intercept and `d - 1` standard normal
/// covariates; true coefficients are drawn from `N(0, 1/d)`.
pub fn synthetic_logistic(n: usize, d: usize, prior_var: f64, seed: u64) -> Result<GlmModel> {
    if d == 0 || n == 0 {
        return Err(Error::invalid("synthetic logistic needs n, d ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, d, |_, j| {
        if j == 0 {
            1.0
        } else {
            rng.sample::<f64, _>(StandardNormal)
        }
    });
    let sd = (1.0 / d as f64).sqrt();
    let beta = DVector::from_fn(d, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let eta = &x * &beta;
    let y = eta.map(|e| f64::from(u8::from(rng.random::<f64>() < logistic(e))));
    GlmModel::new(x, y, Family::BernoulliLogit, GaussianPrior::isotropic(d, 0.0, prior_var)?)
}

/// Single Poisson count `y = 3` with `x = 1` and a `N(0, 4)` prior.
pub fn poisson_1d() -> GlmModel {
    GlmModel::new(
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, 3.0),
        Family::PoissonLog,
        GaussianPrior::isotropic(1, 0.0, 4.0).expect("valid prior"),
    )
    .expect("valid model")
}

/// Conjugate Gaussian linear model in `d ∈ {1, 2}` dimensions.
pub fn conjugate_gaussian(d: usize) -> Result<GlmModel> {
    let rows: &[f64] = match d {
        1 => &[1.0, 1.0, 1.0, 1.0],
        2 => &[1.0, 0.5, 1.0, -1.0, 1.0, 2.0, 1.0, 0.0],
        _ => return Err(Error::invalid("conjugate battery model is defined for d ≤ 2")),
    };
    let x = DMatrix::from_row_slice(4, d, rows);
    let y = DVector::from_vec(vec![0.3, -1.2, 2.5, 0.8]);
    GlmModel::new(x, y, Family::GaussianIdentity, GaussianPrior::isotropic(d, 0.0, 2.0)?)
}

/// `n` draws `y_i ~ N(θ₀, 1)` under a `N(0, prior_var)` prior on the mean.
pub fn conjugate_gaussian_sample(n: usize, theta0: f64, prior_var: f64, seed: u64) -> Result<GlmModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = DVector::from_fn(n, |_, _| theta0 + rng.sample::<f64, _>(StandardNormal));
    GlmModel::new(
        DMatrix::from_element(n, 1, 1.0),
        y,
        Family::GaussianIdentity,
        GaussianPrior::isotropic(1, 0.0, prior_var)?,
    )
}

/// Two-coefficient Poisson regression on a small grid of covariate values.
pub fn poisson_2d() -> GlmModel {
    let xs = [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5];
    let ys = [0.0, 1.0, 0.0, 2.0, 1.0, 4.0];
    let x = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    GlmModel::new(
        x,
        DVector::from_row_slice(&ys),
        Family::PoissonLog,
        GaussianPrior::isotropic(2, 0.0, 4.0).expect("valid prior"),
    )
    .expect("valid model")
}

/// A target posterior with the structure needed to fit and perturb it.
#[derive(Clone)]
pub struct BatteryModel {
    pub name: String,
    pub model: Arc<dyn Posterior>,
    /// Present when the model has GLM structure (enables EP and the fast
    /// skewness-factor path).
    pub glm: Option<Arc<GlmModel>>,
    /// Whether the posterior is exactly Gaussian.
    pub symmetric: bool,
}

impl std::fmt::Debug for BatteryModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BatteryModel")
            .field("name", &self.name)
            .field("dim", &self.model.dim())
            .finish()
    }
}

impl BatteryModel {
    pub fn from_glm(name: &str, glm: GlmModel) -> Self {
        let symmetric = glm.family() == Family::GaussianIdentity;
        let glm = Arc::new(glm);
        Self {
            name: name.to_string(),
            model: glm.clone(),
            glm: Some(glm),
            symmetric,
        }
    }

    pub fn from_model(name: &str, model: impl Posterior + 'static) -> Self {
        Self {
            name: name.to_string(),
            model: Arc::new(model),
            glm: None,
            symmetric: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Approximation kinds that can be fitted to this model.
    pub fn supported_kinds(&self) -> Vec<ApproxKind> {
        let mut kinds = vec![ApproxKind::Laplace, ApproxKind::Gvb];
        if self.glm.is_some() {
            kinds.push(ApproxKind::Gep);
        }
        let center = vec![0.0; self.dim()];
        if self.dim() <= 2
            && self.model.log_lik_derivative(&center, 3).is_some()
            && self.model.log_lik_derivative(&center, 4).is_some()
        {
            kinds.push(ApproxKind::Snp);
        }
        kinds
    }

    /// Fits the symmetric approximation of the given kind. GVB starts from
    /// the Laplace fit and SNP is built on it.
    pub fn fit(&self, kind: ApproxKind, opts: &FitOptions) -> Result<SymmetricApproximation> {
        let init = vec![0.0; self.dim()];
        match kind {
            ApproxKind::Laplace => fit_laplace(self.model.as_ref(), &init, &opts.laplace),
            ApproxKind::Gvb => {
                let la = fit_laplace(self.model.as_ref(), &init, &opts.laplace)?;
                let mut gvb = opts.gvb.clone();
                gvb.seed = derive_seed(opts.seed, &format!("gvb/{}", self.name));
                Ok(fit_gvb(self.model.as_ref(), la.gaussian(), &gvb)?.approximation)
            }
            ApproxKind::Gep => {
                let glm = self.glm.as_ref().ok_or_else(|| {
                    Error::Unsupported(format!("EP needs a GLM; `{}` is not one", self.name))
                })?;
                Ok(fit_gep(glm, &opts.ep)?.approximation)
            }
            ApproxKind::Snp => {
                let la = fit_laplace(self.model.as_ref(), &init, &opts.laplace)?;
                build_snp(self.model.as_ref(), &la)
            }
        }
    }

    /// Skew-symmetric perturbation of `base`, using the linear-predictor
    /// shortcut when the model is a GLM.
    pub fn perturb(&self, base: SymmetricApproximation) -> Result<SkewSymmetricApproximation> {
        match &self.glm {
            Some(glm) => SkewSymmetricApproximation::from_glm(base, glm.clone()),
            None => SkewSymmetricApproximation::from_model(base, self.model.clone()),
        }
    }
}

/// Options shared by every fitter.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub laplace: LaplaceOptions,
    pub gvb: GvbOptions,
    pub ep: EpOptions,
    pub seed: u64,
}

/// The low-dimensional models on which identities are verified by
/// quadrature.
pub fn battery() -> Vec<BatteryModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0, "battery/exp-rate"));
    let y = simulate_exponential(25, 0.0, &mut rng);
    vec![
        BatteryModel::from_glm("poisson-1d", poisson_1d()),
        BatteryModel::from_glm("poisson-2d", poisson_2d()),
        BatteryModel::from_glm(
            "logistic-2d",
            synthetic_logistic(20, 2, 4.0, derive_seed(0, "battery/logistic")).expect("valid"),
        ),
        BatteryModel::from_model(
            "exp-rate-1d",
            exponential_rate_model(&y, 100.0).expect("positive draws"),
        ),
        BatteryModel::from_glm("conjugate-1d", conjugate_gaussian(1).expect("d = 1")),
        BatteryModel::from_glm("conjugate-2d", conjugate_gaussian(2).expect("d = 2")),
    ]
}

/// Battery entry by name.
pub fn battery_model(name: &str) -> Result<BatteryModel> {
    battery()
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| Error::invalid(format!("unknown battery model `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fd_gradient, log_posterior_gradient, posterior_derivatives};

    #[test]
    fn substance_use_design() {
        let m = substance_use_model(4.0).unwrap();
        assert_eq!(m.n_obs(), 32);
        assert_eq!(m.design().ncols(), 16);
        assert_eq!(m.response().sum(), 2276.0);
        let names = m.column_names();
        assert_eq!(names[0], "(Intercept)");
        assert_eq!(names[6], "alcohol:cigarettes");
        assert_eq!(names[15], "male:white");
        // every row is a distinct combination of the five factors
        let mut keys: Vec<u32> = (0..32)
            .map(|i| (1..6).map(|j| (m.design()[(i, j)] as u32) << (j - 1)).sum())
            .collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 32);
        // interaction columns are products of the main effects
        for i in 0..32 {
            assert_eq!(m.design()[(i, 6)], m.design()[(i, 1)] * m.design()[(i, 2)]);
        }
    }

    #[test]
    fn exponential_rate_derivatives() {
        let y = [0.5, 1.5, 2.0];
        let m = exponential_rate_model(&y, 100.0).unwrap();
        let t = [0.3];
        let lp = |t: &[f64]| m.log_density(t);
        let fd = fd_gradient(&lp, &t);
        assert!((log_posterior_gradient(&m, &t)[0] - fd[0]).abs() < 1e-6);
        // ℓ'' = ℓ''' = ℓ'''' = -e^θ Σy
        let s: f64 = y.iter().sum();
        for k in 2..=4 {
            let d = m.log_lik_derivative(&t, k).unwrap();
            assert!((d.get(&vec![0; k]) + 0.3f64.exp() * s).abs() < 1e-12);
        }
        let h = posterior_derivatives(&m, &t, 2).unwrap();
        assert!((h.get(&[0, 0]) - (-0.3f64.exp() * s - 0.01)).abs() < 1e-12);
        assert!(exponential_rate_model(&[1.0, -2.0], 1.0).is_err());
    }

    #[test]
    fn synthetic_logistic_is_reproducible() {
        let a = synthetic_logistic(50, 3, 4.0, 1).unwrap();
        let b = synthetic_logistic(50, 3, 4.0, 1).unwrap();
        assert_eq!(a.design(), b.design());
        assert_eq!(a.response(), b.response());
        assert!(a.response().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn battery_covers_every_kind_in_one_and_two_dimensions() {
        let b = battery();
        assert!(b.iter().any(|m| m.dim() == 1) && b.iter().any(|m| m.dim() == 2));
        for kind in [ApproxKind::Laplace, ApproxKind::Gvb, ApproxKind::Gep, ApproxKind::Snp] {
            assert!(b.iter().any(|m| m.supported_kinds().contains(&kind)));
        }
        let pairs: usize = b.iter().map(|m| m.supported_kinds().len()).sum();
        assert!(pairs >= 6);
    }
}
