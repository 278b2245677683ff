//! Run configuration: one TOML document, validated before any computation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::approx::{ApproxKind, EpOptions, GvbOptions, LaplaceOptions};
use crate::bench::RateOptions;
use crate::error::{Error, Result};
use crate::glm::{Dataset, Family, GlmModel};
use crate::mcmc::McmcConfig;
use crate::model::GaussianPrior;
use crate::models::{substance_use_model, BatteryModel, FitOptions};
use crate::verify::VerifyOptions;

/// Dataset name that selects the bundled substance-use counts.
pub const BUNDLED_DATASET: &str = "bundled:substance-use";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub family: String,
    /// A CSV path (relative to the config file) or [`BUNDLED_DATASET`].
    pub dataset: String,
    pub response: String,
    pub add_intercept: bool,
    pub prior_mean: f64,
    pub prior_var: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            family: "poisson".into(),
            dataset: BUNDLED_DATASET.into(),
            response: "count".into(),
            add_intercept: true,
            prior_mean: 0.0,
            prior_var: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxSpec {
    pub kind: String,
    /// Fitter options for this kind; unknown keys are rejected.
    #[serde(default)]
    pub options: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub n_draws: usize,
    /// `csv` or `binary`.
    pub format: String,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            n_draws: 10_000,
            format: "csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub n_draws: usize,
    pub max_r_hat: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            n_draws: 10_000,
            max_r_hat: 1.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    /// `exponential` or `conjugate`.
    pub family: String,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub grid_points: usize,
    pub grid_half_width: f64,
    pub theta0: f64,
    pub prior_var: f64,
}

impl Default for RatesSection {
    fn default() -> Self {
        let r = RateOptions::default();
        Self {
            family: "exponential".into(),
            sample_sizes: r.sample_sizes,
            replicates: r.replicates,
            grid_points: r.grid_points,
            grid_half_width: r.grid_half_width,
            theta0: 0.0,
            prior_var: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub models: Option<Vec<String>>,
    pub kinds: Option<Vec<String>>,
    pub factor_offset: f64,
    pub random_skewing_functions: Option<usize>,
    pub ks_draws: Option<usize>,
    pub histogram_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default = "default_approximations")]
    pub approximations: Vec<ApproxSpec>,
    /// The sampler seed is always derived from the run seed.
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub verify: VerifySection,
    /// Directory that relative dataset paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("skewfit-out")
}

fn default_approximations() -> Vec<ApproxSpec> {
    ["la", "gvb", "gep"]
        .iter()
        .map(|k| ApproxSpec {
            kind: k.to_string(),
            options: None,
        })
        .collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            model: ModelSpec::default(),
            approximations: default_approximations(),
            mcmc: McmcConfig::default(),
            sample: SampleSection::default(),
            compare: CompareSection::default(),
            rates: RatesSection::default(),
            verify: VerifySection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn field_err(field: &str, e: impl std::fmt::Display) -> Error {
    let msg = e.to_string();
    let msg = msg.strip_prefix("config error: ").unwrap_or(&msg);
    Error::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if raw.get("mcmc").and_then(|m| m.get("seed")).is_some() {
            return Err(field_err("mcmc.seed", "the sampler seed is derived from the top-level `seed`"));
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Self::from_toml(&text, &base)
    }

    /// Checks every field that can be checked without heavy computation.
    pub fn validate(&self) -> Result<()> {
        let family: Family = self.model.family.parse().map_err(|e| field_err("model.family", e))?;
        if !(self.model.prior_var > 0.0 && self.model.prior_var.is_finite()) {
            return Err(field_err("model.prior_var", "must be positive and finite"));
        }
        if !self.model.prior_mean.is_finite() {
            return Err(field_err("model.prior_mean", "must be finite"));
        }
        if self.model.dataset == BUNDLED_DATASET {
            if family != Family::PoissonLog {
                return Err(field_err("model.family", "the bundled dataset is a Poisson model"));
            }
        } else if !self.dataset_path().is_file() {
            return Err(field_err(
                "model.dataset",
                format!("{} does not exist", self.dataset_path().display()),
            ));
        }
        if self.approximations.is_empty() {
            return Err(field_err("approximations", "at least one is required"));
        }
        for (i, a) in self.approximations.iter().enumerate() {
            let kind: ApproxKind = a.kind.parse().map_err(|e| field_err(&format!("approximations[{i}].kind"), e))?;
            self.options_for(kind, a).map_err(|e| field_err(&format!("approximations[{i}].options"), e))?;
        }
        self.mcmc.validate()?;
        if self.sample.n_draws == 0 {
            return Err(field_err("sample.n_draws", "must be positive"));
        }
        if !matches!(self.sample.format.as_str(), "csv" | "binary") {
            return Err(field_err("sample.format", "expected `csv` or `binary`"));
        }
        if self.compare.n_draws == 0 {
            return Err(field_err("compare.n_draws", "must be positive"));
        }
        if !(self.compare.max_r_hat >= 1.0) {
            return Err(field_err("compare.max_r_hat", "must be at least 1"));
        }
        if !matches!(self.rates.family.as_str(), "exponential" | "conjugate") {
            return Err(field_err("rates.family", "expected `exponential` or `conjugate`"));
        }
        self.rate_options().validate()?;
        self.verify_options()?;
        Ok(())
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.base_dir.join(&self.model.dataset)
    }

    /// Approximation kinds in configuration order.
    pub fn kinds(&self) -> Result<Vec<ApproxKind>> {
        self.approximations.iter().map(|a| a.kind.parse()).collect()
    }

    fn options_for(&self, kind: ApproxKind, spec: &ApproxSpec) -> Result<FitOptions> {
        let mut opts = FitOptions {
            seed: crate::seed::derive_seed(self.seed, "fit"),
            ..Default::default()
        };
        let Some(table) = &spec.options else {
            return Ok(opts);
        };
        let value = toml::Value::Table(table.clone());
        let bad = |e: toml::de::Error| Error::Config(e.to_string());
        match kind {
            ApproxKind::Laplace | ApproxKind::Snp => opts.laplace = strict::<LaplaceOptions>(value).map_err(bad)?,
            ApproxKind::Gvb => opts.gvb = strict::<GvbOptions>(value).map_err(bad)?,
            ApproxKind::Gep => opts.ep = strict::<EpOptions>(value).map_err(bad)?,
        }
        Ok(opts)
    }

    /// Fitter options for the `i`-th approximation.
    pub fn fit_options(&self, i: usize) -> Result<FitOptions> {
        let spec = &self.approximations[i];
        self.options_for(spec.kind.parse()?, spec)
    }

    /// Builds the posterior named by the `model` section.
    pub fn build_model(&self) -> Result<BatteryModel> {
        let family: Family = self.model.family.parse()?;
        if self.model.dataset == BUNDLED_DATASET {
            let mut glm = substance_use_model(self.model.prior_var)?;
            if self.model.prior_mean != 0.0 {
                let prior = GaussianPrior::isotropic(glm.design().ncols(), self.model.prior_mean, self.model.prior_var)?;
                glm = glm.with_prior(prior)?;
            }
            return Ok(BatteryModel::from_glm("substance-use", glm));
        }
        let data = Dataset::from_csv(self.dataset_path(), &self.model.response, self.model.add_intercept)?;
        let prior = GaussianPrior::isotropic(data.predictors.ncols(), self.model.prior_mean, self.model.prior_var)?;
        let glm = GlmModel::from_dataset(&data, family, prior)?;
        let name = Path::new(&self.model.dataset)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Ok(BatteryModel::from_glm(&name, glm))
    }

    /// Sampler settings with the seed derived from the run seed.
    pub fn mcmc_config(&self) -> McmcConfig {
        McmcConfig {
            seed: crate::seed::derive_seed(self.seed, "mcmc"),
            ..self.mcmc.clone()
        }
    }

    pub fn rate_options(&self) -> RateOptions {
        RateOptions {
            sample_sizes: self.rates.sample_sizes.clone(),
            replicates: self.rates.replicates,
            seed: crate::seed::derive_seed(self.seed, "rates"),
            grid_points: self.rates.grid_points,
            grid_half_width: self.rates.grid_half_width,
        }
    }

    pub fn verify_options(&self) -> Result<VerifyOptions> {
        let d = VerifyOptions::default();
        let kinds = match &self.verify.kinds {
            Some(k) => Some(
                k.iter()
                    .enumerate()
                    .map(|(i, s)| s.parse().map_err(|e| field_err(&format!("verify.kinds[{i}]"), e)))
                    .collect::<Result<Vec<ApproxKind>>>()?,
            ),
            None => None,
        };
        if let Some(models) = &self.verify.models {
            let known: Vec<String> = crate::models::battery().into_iter().map(|m| m.name).collect();
            if let Some(bad) = models.iter().find(|m| !known.contains(m)) {
                return Err(field_err("verify.models", format!("unknown battery model `{bad}` (known: {})", known.join(", "))));
            }
        }
        Ok(VerifyOptions {
            seed: self.seed,
            models: self.verify.models.clone(),
            kinds,
            factor_offset: self.verify.factor_offset,
            random_skewing_functions: self.verify.random_skewing_functions.unwrap_or(d.random_skewing_functions),
            ks_draws: self.verify.ks_draws.unwrap_or(d.ks_draws),
            histogram_draws: self.verify.histogram_draws.unwrap_or(d.histogram_draws),
        })
    }

    /// The configuration as JSON, without machine-specific paths.
    pub fn to_json_value(&self) -> serde_json::Value {
        let effective = RunConfig {
            mcmc: self.mcmc_config(),
            ..self.clone()
        };
        serde_json::to_value(effective).expect("config serializes")
    }
}

/// Deserializes `value` into `T`, rejecting keys that `T` does not have.
fn strict<T: serde::de::DeserializeOwned + Serialize>(value: toml::Value) -> std::result::Result<T, toml::de::Error> {
    let parsed: T = value.clone().try_into()?;
    let known = toml::Value::try_from(&parsed).ok();
    if let (toml::Value::Table(given), Some(toml::Value::Table(known))) = (&value, known) {
        if let Some(k) = given.keys().find(|k| !known.contains_key(*k)) {
            return Err(serde::de::Error::custom(format!("unknown option `{k}`")));
        }
    }
    Ok(parsed)
}
