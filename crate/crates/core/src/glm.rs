//! Generalized linear models with independent Gaussian priors, and CSV
//! dataset ingestion.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::error::{Error, Result};
use crate::math::{inv_mills, log_logistic, log_norm_cdf, logistic, norm_cdf, LN_SQRT_2PI};
use crate::model::{GaussianPrior, Posterior};
use crate::tensor::DerivTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    PoissonLog,
    BernoulliLogit,
    BernoulliProbit,
    GaussianIdentity,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson-log" | "poisson" => Ok(Family::PoissonLog),
            "bernoulli-logit" | "logistic" => Ok(Family::BernoulliLogit),
            "bernoulli-probit" | "probit" => Ok(Family::BernoulliProbit),
            "gaussian-identity" | "gaussian" => Ok(Family::GaussianIdentity),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::PoissonLog => "poisson-log",
            Family::BernoulliLogit => "bernoulli-logit",
            Family::BernoulliProbit => "bernoulli-probit",
            Family::GaussianIdentity => "gaussian-identity",
        }
    }

    /// Inverse link, `E(y | η)`.
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::PoissonLog => eta.exp(),
            Family::BernoulliLogit => logistic(eta),
            Family::BernoulliProbit => norm_cdf(eta),
            Family::GaussianIdentity => eta,
        }
    }

    fn is_canonical(self) -> bool {
        !matches!(self, Family::BernoulliProbit)
    }
}

/// Observation-level log density `g(y, η)` and its η-derivatives.
#[derive(Debug, Clone, Copy)]
struct ObsTerm {
    family: Family,
    /// Noise variance, gaussian-identity only.
    dispersion: f64,
}

impl ObsTerm {
    fn log_density(&self, y: f64, eta: f64) -> f64 {
        match self.family {
            Family::PoissonLog => y * eta - eta.exp() - ln_gamma(y + 1.0),
            Family::BernoulliLogit => {
                if y > 0.5 {
                    log_logistic(eta)
                } else {
                    log_logistic(-eta)
                }
            }
            Family::BernoulliProbit => {
                if y > 0.5 {
                    log_norm_cdf(eta)
                } else {
                    log_norm_cdf(-eta)
                }
            }
            Family::GaussianIdentity => {
                let s2 = self.dispersion;
                -0.5 * (y - eta) * (y - eta) / s2 - 0.5 * s2.ln() - LN_SQRT_2PI
            }
        }
    }

    /// k-th derivative of `g(y, η)` in η.
    fn derivative(&self, y: f64, eta: f64, k: usize) -> Option<f64> {
        let v = match (self.family, k) {
            (Family::PoissonLog, 1) => y - eta.exp(),
            (Family::PoissonLog, _) => -eta.exp(),
            (Family::BernoulliLogit, 1) => y - logistic(eta),
            (Family::BernoulliLogit, k) => {
                let p = logistic(eta);
                let v = p * (1.0 - p);
                match k {
                    2 => -v,
                    3 => -v * (1.0 - 2.0 * p),
                    _ => -v * (1.0 - 6.0 * p + 6.0 * p * p),
                }
            }
            (Family::GaussianIdentity, 1) => (y - eta) / self.dispersion,
            (Family::GaussianIdentity, 2) => -1.0 / self.dispersion,
            (Family::GaussianIdentity, _) => 0.0,
            (Family::BernoulliProbit, k) => {
                let s = if y > 0.5 { 1.0 } else { -1.0 };
                let lam = inv_mills(s * eta);
                match k {
                    1 => s * lam,
                    2 => -lam * (s * eta + lam),
                    _ => return None,
                }
            }
        };
        Some(v)
    }
}

/// `y_i | θ ~ family(x_iᵀθ)` independently, `θ_j ~ N(m_j, v_j)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmModel {
    design: DMatrix<f64>,
    response: DVector<f64>,
    family: Family,
    prior: GaussianPrior,
    dispersion: f64,
    column_names: Vec<String>,
}

impl GlmModel {
    pub fn new(
        design: DMatrix<f64>,
        response: DVector<f64>,
        family: Family,
        prior: GaussianPrior,
    ) -> Result<Self> {
        let (n, d) = design.shape();
        if n == 0 || d == 0 {
            return Err(Error::invalid("design matrix must be non-empty"));
        }
        if response.len() != n {
            return Err(Error::invalid(format!(
                "design has {n} rows but response has {} entries",
                response.len()
            )));
        }
        if prior.dim() != d {
            return Err(Error::invalid(format!(
                "prior has dimension {}, design has {d} columns",
                prior.dim()
            )));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("design and response must be finite"));
        }
        match family {
            Family::BernoulliLogit | Family::BernoulliProbit => {
                if response.iter().any(|&y| y != 0.0 && y != 1.0) {
                    return Err(Error::invalid("bernoulli responses must be 0 or 1"));
                }
            }
            Family::PoissonLog => {
                if response.iter().any(|&y| y < 0.0 || y.fract() != 0.0) {
                    return Err(Error::invalid("poisson responses must be non-negative integers"));
                }
            }
            Family::GaussianIdentity => {}
        }
        let column_names = (1..=d).map(|j| format!("theta_{j}")).collect();
        Ok(Self {
            design,
            response,
            family,
            prior,
            dispersion: 1.0,
            column_names,
        })
    }

    pub fn from_dataset(data: &Dataset, family: Family, prior: GaussianPrior) -> Result<Self> {
        let mut m = Self::new(
            data.predictors.clone(),
            data.responses.clone(),
            family,
            prior,
        )?;
        m.column_names = data.column_names.clone();
        Ok(m)
    }

    /// Known noise variance for the gaussian-identity family (default 1).
    pub fn with_dispersion(mut self, dispersion: f64) -> Result<Self> {
        if !(dispersion > 0.0 && dispersion.is_finite()) {
            return Err(Error::invalid("dispersion must be positive"));
        }
        self.dispersion = dispersion;
        Ok(self)
    }

    pub fn with_prior(mut self, prior: GaussianPrior) -> Result<Self> {
        if prior.dim() != self.design.ncols() {
            return Err(Error::invalid("prior dimension does not match the design"));
        }
        self.prior = prior;
        Ok(self)
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.design.ncols() {
            return Err(Error::invalid("one column name per predictor is required"));
        }
        self.column_names = names;
        Ok(self)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn n_obs(&self) -> usize {
        self.design.nrows()
    }

    fn term(&self) -> ObsTerm {
        ObsTerm {
            family: self.family,
            dispersion: self.dispersion,
        }
    }

    /// `η = Xθ`.
    pub fn linear_predictor(&self, theta: &[f64]) -> DVector<f64> {
        &self.design * DVector::from_column_slice(theta)
    }

    /// `g(y_i, η)` for one observation.
    pub fn obs_log_lik(&self, i: usize, eta: f64) -> f64 {
        self.term().log_density(self.response[i], eta)
    }

    /// `Σ_i g(y_i, η_i)`.
    pub fn log_lik_from_eta(&self, eta: &[f64]) -> f64 {
        let term = self.term();
        self.response
            .iter()
            .zip(eta)
            .map(|(&y, &e)| term.log_density(y, e))
            .sum()
    }

    /// k-th η-derivative of the observation term `g(y_i, ·)` at `eta`.
    pub fn obs_derivative(&self, i: usize, eta: f64, k: usize) -> Option<f64> {
        self.term().derivative(self.response[i], eta, k)
    }

    /// `μ(θ) = (E(y_1|θ), ..., E(y_n|θ))`.
    pub fn mu(&self, theta: &[f64]) -> Result<DVector<f64>> {
        if theta.len() != self.design.ncols() {
            return Err(Error::invalid(format!(
                "parameter has dimension {}, model expects {}",
                theta.len(),
                self.design.ncols()
            )));
        }
        Ok(self.linear_predictor(theta).map(|e| self.family.mean(e)))
    }
}

impl Posterior for GlmModel {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.prior.log_density(theta)
    }

    fn log_lik(&self, theta: &[f64]) -> f64 {
        self.log_lik_from_eta(self.linear_predictor(theta).as_slice())
    }

    fn log_lik_derivative(&self, theta: &[f64], order: usize) -> Option<DerivTensor> {
        if order > 2 && !self.family.is_canonical() {
            return None;
        }
        let eta = self.linear_predictor(theta);
        let term = self.term();
        let d = self.dim();
        match order {
            1 => {
                let w = DVector::from_iterator(
                    eta.len(),
                    self.response
                        .iter()
                        .zip(eta.iter())
                        .map(|(&y, &e)| term.derivative(y, e, 1).expect("order 1")),
                );
                Some(DerivTensor::from_vector(&(self.design.transpose() * w)))
            }
            2 => {
                let mut xw = self.design.clone();
                for (i, (&y, &e)) in self.response.iter().zip(eta.iter()).enumerate() {
                    let w = term.derivative(y, e, 2).expect("order 2");
                    xw.row_mut(i).scale_mut(w);
                }
                Some(DerivTensor::from_matrix(&(self.design.transpose() * xw)))
            }
            k => {
                let mut t = DerivTensor::zeros(d, k);
                let mut row = vec![0.0; d];
                for (i, (&y, &e)) in self.response.iter().zip(eta.iter()).enumerate() {
                    let w = term.derivative(y, e, k)?;
                    if w == 0.0 {
                        continue;
                    }
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = self.design[(i, j)];
                    }
                    t.add_outer_power(&row, w);
                }
                Some(t)
            }
        }
    }

    fn log_prior_derivative(&self, theta: &[f64], order: usize) -> Option<DerivTensor> {
        Some(self.prior.derivative(theta, order))
    }

    fn column_names(&self) -> Vec<String> {
        self.column_names.clone()
    }
}

/// A rectangular table of predictors and one response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub predictors: DMatrix<f64>,
    pub responses: DVector<f64>,
    pub column_names: Vec<String>,
}

impl Dataset {
    pub fn n_obs(&self) -> usize {
        self.responses.len()
    }

    /// Reads a headed CSV. `response` names the response column; every
    /// other column is a predictor. With `add_intercept`, a leading column
    /// of ones named `(Intercept)` is inserted.
    pub fn from_csv(path: impl AsRef<Path>, response: &str, add_intercept: bool) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(file, response, add_intercept)
    }

    pub fn from_reader(
        reader: impl std::io::Read,
        response: &str,
        add_intercept: bool,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let resp_idx = headers
            .iter()
            .position(|h| h == response)
            .ok_or_else(|| Error::Config(format!("response column `{response}` not found")))?;
        let mut names: Vec<String> = Vec::new();
        if add_intercept {
            names.push("(Intercept)".to_string());
        }
        names.extend(
            headers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != resp_idx)
                .map(|(_, h)| h.to_string()),
        );
        let mut rows: Vec<f64> = Vec::new();
        let mut ys = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64> {
                let raw = rec.get(j).unwrap_or("");
                raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::invalid(format!(
                        "row {}: column `{}` has missing or non-numeric value `{raw}`",
                        line + 1,
                        &headers[j]
                    ))
                })
            };
            ys.push(parse(resp_idx)?);
            if add_intercept {
                rows.push(1.0);
            }
            for j in (0..headers.len()).filter(|&j| j != resp_idx) {
                rows.push(parse(j)?);
            }
        }
        if ys.is_empty() {
            return Err(Error::invalid("dataset has no rows"));
        }
        let n = ys.len();
        Ok(Self {
            predictors: DMatrix::from_row_slice(n, names.len(), &rows),
            responses: DVector::from_vec(ys),
            column_names: names,
        })
    }
}
