//! Python bindings for `skewfit`.
//!
//! Matrices cross the boundary as lists of rows; reports come back as the
//! same JSON documents the command-line tool writes, decoded into dicts.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use skewfit::approx::{ApproxKind, SymmetricApproximation};
use skewfit::bench::{
    fit_all, rate_experiment, run_compare, CompareOptions, ConjugateGaussianFamily, ExponentialRateFamily,
    RateFamily, RateOptions, RateVariant,
};
use skewfit::commands::{cmd_compare, cmd_fit, cmd_rates, cmd_sample, cmd_verify, Console};
use skewfit::config::RunConfig;
use skewfit::divergence::{divergence_from_values, DivergenceKind};
use skewfit::glm::{Family, GlmModel};
use skewfit::mcmc::{Algorithm, McmcConfig};
use skewfit::model::GaussianPrior;
use skewfit::models::{battery, battery_model, substance_use_model, synthetic_logistic, BatteryModel, FitOptions};
use skewfit::skew::{sample_symmetric_seeded, SkewSymmetricApproximation};
use skewfit::verify::{run_verify, FittedPair, PairTables, VerifyOptions};

create_exception!(skewfit, SkewfitError, PyException);
create_exception!(skewfit, ConfigError, SkewfitError);

fn to_py(e: skewfit::Error) -> PyErr {
    match e {
        skewfit::Error::Config(msg) => ConfigError::new_err(msg),
        other => SkewfitError::new_err(other.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_kind(kind: &str) -> PyResult<ApproxKind> {
    kind.parse().map_err(to_py)
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| SkewfitError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn check_dim(theta: &[f64], d: usize) -> PyResult<()> {
    if theta.len() == d {
        Ok(())
    } else {
        Err(SkewfitError::new_err(format!("expected a point of length {d}, got {}", theta.len())))
    }
}

/// A posterior target.
#[pyclass(name = "Model", module = "skewfit", frozen)]
struct PyModel {
    inner: BatteryModel,
}

#[pymethods]
impl PyModel {
    /// Generalized linear model with an isotropic Gaussian prior.
    #[staticmethod]
    #[pyo3(signature = (x, y, family = "poisson", prior_mean = 0.0, prior_var = 4.0, name = "glm"))]
    fn glm(x: Vec<Vec<f64>>, y: Vec<f64>, family: &str, prior_mean: f64, prior_var: f64, name: &str) -> PyResult<Self> {
        let n = x.len();
        let d = x.first().map_or(0, Vec::len);
        if x.iter().any(|r| r.len() != d) {
            return Err(SkewfitError::new_err("design rows have different lengths"));
        }
        let design = DMatrix::from_row_iterator(n, d, x.into_iter().flatten());
        let family: Family = family.parse().map_err(to_py)?;
        let prior = GaussianPrior::isotropic(d, prior_mean, prior_var).map_err(to_py)?;
        let glm = GlmModel::new(design, DVector::from_vec(y), family, prior).map_err(to_py)?;
        Ok(Self {
            inner: BatteryModel::from_glm(name, glm),
        })
    }

    /// Poisson regression on the bundled 32-observation dataset.
    #[staticmethod]
    #[pyo3(signature = (prior_var = 4.0))]
    fn substance_use(prior_var: f64) -> PyResult<Self> {
        let glm = substance_use_model(prior_var).map_err(to_py)?;
        Ok(Self {
            inner: BatteryModel::from_glm("substance-use", glm),
        })
    }

    /// Simulated logistic regression.
    #[staticmethod]
    #[pyo3(signature = (n, d, prior_var = 4.0, seed = 0))]
    fn logistic(n: usize, d: usize, prior_var: f64, seed: u64) -> PyResult<Self> {
        let glm = synthetic_logistic(n, d, prior_var, seed).map_err(to_py)?;
        Ok(Self {
            inner: BatteryModel::from_glm("logistic", glm),
        })
    }

    /// One of the low-dimensional verification models.
    #[staticmethod]
    fn battery(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: battery_model(name).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn battery_names() -> Vec<String> {
        battery().into_iter().map(|m| m.name).collect()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn supported_kinds(&self) -> Vec<&'static str> {
        self.inner.supported_kinds().into_iter().map(ApproxKind::name).collect()
    }

    /// Unnormalized log posterior density.
    fn log_density(&self, theta: Vec<f64>) -> PyResult<f64> {
        check_dim(&theta, self.inner.dim())?;
        Ok(self.inner.model.log_density(&theta))
    }

    /// Fits a symmetric approximation (`la`, `gvb`, `gep` or `snp`).
    #[pyo3(signature = (kind = "la", seed = 0))]
    fn fit(&self, py: Python<'_>, kind: &str, seed: u64) -> PyResult<PyApprox> {
        let kind = parse_kind(kind)?;
        let opts = FitOptions {
            seed,
            ..Default::default()
        };
        let inner = py.detach(|| self.inner.fit(kind, &opts)).map_err(to_py)?;
        Ok(PyApprox { inner })
    }

    /// Skewed counterpart of a fitted approximation of this model.
    fn skew(&self, base: &PyApprox) -> PyResult<PySkewApprox> {
        let inner = self.inner.perturb(base.inner.clone()).map_err(to_py)?;
        Ok(PySkewApprox { inner })
    }

    /// Quadrature divergences from the posterior to the base approximation,
    /// its skewed counterpart, and from the symmetrized posterior to the
    /// base. Only for models with one or two parameters.
    #[pyo3(signature = (kind = "la", seed = 0))]
    fn divergences<'py>(&self, py: Python<'py>, kind: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let kind = parse_kind(kind)?;
        let values = py
            .detach(|| -> skewfit::Result<Vec<(String, [f64; 3])>> {
                let pair = FittedPair::fit(&self.inner, kind, seed)?;
                let t = PairTables::new(&pair, 0.0)?;
                DivergenceKind::battery()
                    .into_iter()
                    .map(|k| {
                        Ok((
                            k.label(),
                            [
                                divergence_from_values(k, &t.posterior, &t.skew)?.value,
                                divergence_from_values(k, &t.posterior, &t.base)?.value,
                                divergence_from_values(k, &t.symmetrized, &t.base)?.value,
                            ],
                        ))
                    })
                    .collect()
            })
            .map_err(to_py)?;
        let out = PyDict::new(py);
        for (label, [skew, base, symmetrized]) in values {
            let entry = PyDict::new(py);
            entry.set_item("skew", skew)?;
            entry.set_item("base", base)?;
            entry.set_item("symmetrized", symmetrized)?;
            out.set_item(label, entry)?;
        }
        Ok(out)
    }

    /// Error table of each approximation and its skewed counterpart
    /// against a reference sampler.
    #[pyo3(signature = (kinds = vec!["la".to_string()], seed = 0, n_draws = 10_000, n_warmup = 2000, n_keep = 10_000, algorithm = "hmc"))]
    fn compare<'py>(
        &self,
        py: Python<'py>,
        kinds: Vec<String>,
        seed: u64,
        n_draws: usize,
        n_warmup: usize,
        n_keep: usize,
        algorithm: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let kinds = kinds.iter().map(|k| parse_kind(k)).collect::<PyResult<Vec<_>>>()?;
        let algorithm = match algorithm {
            "hmc" => Algorithm::Hmc,
            "rwm" => Algorithm::Rwm,
            other => return Err(ConfigError::new_err(format!("unknown algorithm `{other}`"))),
        };
        let mcmc = McmcConfig {
            n_warmup,
            n_keep,
            seed,
            algorithm,
            ..Default::default()
        };
        mcmc.validate().map_err(to_py)?;
        let opts = CompareOptions {
            n_draws,
            mcmc,
            seed,
            ..Default::default()
        };
        let fit_opts = FitOptions {
            seed,
            ..Default::default()
        };
        let outcome = py
            .detach(|| {
                let fits = fit_all(&self.inner, &kinds, &fit_opts)
                    .into_iter()
                    .map(|(k, r)| r.map(|f| (k, f)))
                    .collect::<skewfit::Result<Vec<_>>>()?;
                run_compare(&self.inner, &fits, &opts)
            })
            .map_err(to_py)?;
        json_to_py(py, &outcome)
    }

    fn __repr__(&self) -> String {
        format!("Model(name={:?}, dim={})", self.inner.name, self.inner.dim())
    }
}

/// A symmetric approximation: Laplace, Gaussian variational, EP or the
/// polynomial-corrected Laplace.
#[pyclass(name = "Approximation", module = "skewfit", frozen)]
struct PyApprox {
    inner: SymmetricApproximation,
}

#[pymethods]
impl PyApprox {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    #[getter]
    fn center(&self) -> Vec<f64> {
        self.inner.center().iter().copied().collect()
    }

    /// Covariance of the underlying Gaussian.
    #[getter]
    fn covariance(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.gaussian().covariance())
    }

    fn log_pdf(&self, theta: Vec<f64>) -> PyResult<f64> {
        check_dim(&theta, self.inner.dim())?;
        Ok(self.inner.log_pdf(&theta))
    }

    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, py: Python<'_>, n: usize, seed: u64) -> Vec<Vec<f64>> {
        rows(&py.detach(|| sample_symmetric_seeded(&self.inner, n, seed)))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SymmetricApproximation::from_json(text).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Approximation(kind={:?}, dim={})", self.inner.kind().name(), self.inner.dim())
    }
}

/// `q*(θ) = 2 f*(θ) w*(θ)` for a fitted symmetric base `f*`.
#[pyclass(name = "SkewApproximation", module = "skewfit", frozen)]
struct PySkewApprox {
    inner: SkewSymmetricApproximation,
}

#[pymethods]
impl PySkewApprox {
    #[getter]
    fn center(&self) -> Vec<f64> {
        self.inner.center().iter().copied().collect()
    }

    #[getter]
    fn base(&self) -> PyApprox {
        PyApprox {
            inner: self.inner.symmetric().clone(),
        }
    }

    /// Skewness factor `w*(θ)` in `[0, 1]`.
    fn factor(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.inner.factor().eval(&theta).map_err(to_py)
    }

    fn log_pdf(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.inner.log_pdf(&theta).map_err(to_py)
    }

    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&py.detach(|| self.inner.sample_seeded(n, seed)).map_err(to_py)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "SkewApproximation(base={:?}, dim={})",
            self.inner.symmetric().kind().name(),
            self.inner.dim()
        )
    }
}

/// `w*` from `log π(θ)` and `log π(2θ̂ - θ)`.
#[pyfunction]
fn factor_from_log_pair(log_at: f64, log_mirror: f64) -> f64 {
    skewfit::skew::factor_from_log_pair(log_at, log_mirror)
}

/// Child seed for a named task.
#[pyfunction]
fn derive_seed(seed: u64, task: &str) -> u64 {
    skewfit::seed::derive_seed(seed, task)
}

/// Total-variation convergence rates on a one-parameter family
/// (`exponential` or `conjugate`).
#[pyfunction]
#[pyo3(signature = (family = "exponential", sample_sizes = None, replicates = 20, seed = 0))]
fn rates<'py>(
    py: Python<'py>,
    family: &str,
    sample_sizes: Option<Vec<usize>>,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut opts = RateOptions {
        replicates,
        seed,
        ..Default::default()
    };
    if let Some(sizes) = sample_sizes {
        opts.sample_sizes = sizes;
    }
    let family: Box<dyn RateFamily> = match family {
        "exponential" => Box::new(ExponentialRateFamily::default()),
        "conjugate" => Box::new(ConjugateGaussianFamily::default()),
        other => return Err(ConfigError::new_err(format!("unknown rate family `{other}`"))),
    };
    let exp = py
        .detach(|| rate_experiment(family.as_ref(), &RateVariant::ALL, &opts))
        .map_err(to_py)?;
    json_to_py(py, &exp)
}

/// The invariant battery; returns the verification report.
#[pyfunction]
#[pyo3(signature = (seed = 0, models = None, kinds = None, random_skewing_functions = 50, ks_draws = 100_000, histogram_draws = 1_000_000))]
fn verify<'py>(
    py: Python<'py>,
    seed: u64,
    models: Option<Vec<String>>,
    kinds: Option<Vec<String>>,
    random_skewing_functions: usize,
    ks_draws: usize,
    histogram_draws: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let kinds = kinds
        .map(|ks| ks.iter().map(|k| parse_kind(k)).collect::<PyResult<Vec<_>>>())
        .transpose()?;
    let opts = VerifyOptions {
        seed,
        models,
        kinds,
        random_skewing_functions,
        ks_draws,
        histogram_draws,
        ..Default::default()
    };
    let report = py.detach(|| run_verify(&opts));
    json_to_py(py, &report)
}

/// Runs a command-line subcommand (`fit`, `sample`, `compare`, `rates` or
/// `verify`) from a TOML configuration and returns the written paths.
#[pyfunction]
#[pyo3(signature = (command, config = None, out = None))]
fn run(py: Python<'_>, command: &str, config: Option<PathBuf>, out: Option<PathBuf>) -> PyResult<Vec<PathBuf>> {
    let mut cfg = match &config {
        Some(path) => {
            let mut cfg = RunConfig::from_file(path).map_err(to_py)?;
            if cfg.output_dir.is_relative() {
                cfg.output_dir = cfg.base_dir.join(&cfg.output_dir);
            }
            cfg
        }
        None => RunConfig::default(),
    };
    cfg.validate().map_err(to_py)?;
    let out = out.unwrap_or_else(|| std::mem::take(&mut cfg.output_dir));
    let console = Console { quiet: true };
    py.detach(|| match command {
        "fit" => cmd_fit(&cfg, &out, console).map(|o| o.written),
        "sample" => cmd_sample(&cfg, &out, console),
        "compare" => cmd_compare(&cfg, &out, console).map(|(_, p)| vec![p]),
        "rates" => cmd_rates(&cfg, &out, console).map(|(_, p)| vec![p]),
        "verify" => cmd_verify(&cfg, &out, console).map(|(_, p)| vec![p]),
        other => Err(skewfit::Error::Config(format!("unknown command `{other}`"))),
    })
    .map_err(to_py)
}

#[pymodule]
#[pyo3(name = "skewfit")]
fn skewfit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SkewfitError", m.py().get_type::<SkewfitError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyApprox>()?;
    m.add_class::<PySkewApprox>()?;
    m.add_function(wrap_pyfunction!(factor_from_log_pair, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(rates, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
