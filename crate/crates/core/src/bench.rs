//! Benchmark protocol: functional summaries of posterior draws, averaged
//! absolute error tables against a reference sampler, the rate-of-convergence
//! experiment on growing data sets, and deterministic report emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{build_snp, fit_laplace, ApproxKind, SymmetricApproximation};
use crate::divergence::{divergence_from_values, DivergenceKind, GridSpec, GridValues};
use crate::error::{Error, Result};
use crate::glm::GlmModel;
use crate::mcmc::{hmc_sample, rwm_sample, Algorithm, ChainDiagnostics, McmcConfig};
use crate::model::Posterior;
use crate::models::{conjugate_gaussian_sample, exponential_rate_model, simulate_exponential, BatteryModel, FitOptions};
use crate::seed::{derive_index, derive_seed};
use crate::skew::sample_symmetric_seeded;

pub const SCHEMA_VERSION: u32 = 1;

/// Version string in `git describe` tag form.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Summaries computed from fewer draws than this carry a precision warning.
pub const MIN_SUMMARY_DRAWS: usize = 1000;

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quartiles and mean of each column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: Vec<f64>,
    pub median: Vec<f64>,
    pub q3: Vec<f64>,
    pub mean: Vec<f64>,
}

impl Quartiles {
    fn of_columns(x: &DMatrix<f64>) -> Self {
        let cols: Vec<[f64; 4]> = (0..x.ncols())
            .into_par_iter()
            .map(|j| {
                let mut v: Vec<f64> = x.column(j).iter().copied().collect();
                // shifted by the first draw, so constant columns average exactly
                let shift = v[0];
                let mean = shift + v.iter().map(|x| x - shift).sum::<f64>() / v.len() as f64;
                v.sort_by(f64::total_cmp);
                [
                    quantile_sorted(&v, 0.25),
                    quantile_sorted(&v, 0.5),
                    quantile_sorted(&v, 0.75),
                    mean,
                ]
            })
            .collect();
        Self {
            q1: cols.iter().map(|c| c[0]).collect(),
            median: cols.iter().map(|c| c[1]).collect(),
            q3: cols.iter().map(|c| c[2]).collect(),
            mean: cols.iter().map(|c| c[3]).collect(),
        }
    }

    fn fields(&self) -> [&[f64]; 4] {
        [&self.q1, &self.median, &self.q3, &self.mean]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSummary {
    pub n_samples: usize,
    pub theta: Quartiles,
    /// Summaries of `μ_i(θ)` per observation, computed draw by draw.
    pub mu: Option<Quartiles>,
    pub warnings: Vec<String>,
}

/// Summaries of an `n × d` sample matrix. With a GLM, `μ(θ⁽ˢ⁾)` is formed
/// for every draw and summarized across draws.
pub fn summarize(samples: &DMatrix<f64>, glm: Option<&GlmModel>) -> Result<FunctionalSummary> {
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::invalid("cannot summarize an empty sample"));
    }
    let mut warnings = Vec::new();
    if n < MIN_SUMMARY_DRAWS {
        warnings.push(format!(
            "only {n} draws; summaries below {MIN_SUMMARY_DRAWS} draws are imprecise"
        ));
    }
    let mu = match glm {
        Some(m) => {
            if m.dim() != samples.ncols() {
                return Err(Error::invalid("sample dimension does not match the model"));
            }
            let family = m.family();
            let eta = samples * m.design().transpose();
            Some(Quartiles::of_columns(&eta.map(|e| family.mean(e))))
        }
        None => None,
    };
    Ok(FunctionalSummary {
        n_samples: n,
        theta: Quartiles::of_columns(samples),
        mu,
        warnings,
    })
}

/// Column order of the error table.
pub const COLUMNS: [&str; 8] = [
    "q1.theta",
    "median.theta",
    "q3.theta",
    "mean.theta",
    "q1.mu",
    "median.mu",
    "q3.mu",
    "mean.mu",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub name: String,
    /// One entry per [`COLUMNS`]; `μ` cells are NaN (null in JSON) for
    /// models without a linear predictor.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Each cell is the mean over coordinates (or observations) of the absolute
/// difference between an approximation's functional and the baseline's.
pub fn error_table(summaries: &[(String, FunctionalSummary)], baseline: &FunctionalSummary) -> Result<ErrorTable> {
    let d = baseline.theta.mean.len();
    let rows = summaries
        .iter()
        .map(|(name, s)| {
            if s.theta.mean.len() != d {
                return Err(Error::invalid(format!(
                    "`{name}` has {} coordinates, baseline has {d}",
                    s.theta.mean.len()
                )));
            }
            let mut values: Vec<f64> = s
                .theta
                .fields()
                .iter()
                .zip(baseline.theta.fields())
                .map(|(a, b)| mean_abs_diff(a, b))
                .collect();
            match (&s.mu, &baseline.mu) {
                (Some(a), Some(b)) if a.mean.len() == b.mean.len() => {
                    values.extend(a.fields().iter().zip(b.fields()).map(|(x, y)| mean_abs_diff(x, y)));
                }
                (Some(_), Some(_)) => {
                    return Err(Error::invalid(format!("`{name}` has a different number of observations")));
                }
                _ => values.extend([f64::NAN; 4]),
            }
            Ok(ErrorRow {
                name: name.clone(),
                values,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ErrorTable { rows })
}

impl ErrorTable {
    pub fn row(&self, name: &str) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Per-cell marks for the better entry of each `(x, skew-x)` row pair;
    /// ties mark both and unpaired rows are never marked.
    pub fn best_in_pair(&self) -> Vec<Vec<bool>> {
        self.rows
            .iter()
            .map(|r| {
                let partner = match r.name.strip_prefix("skew-") {
                    Some(base) => self.row(base),
                    None => self.row(&format!("skew-{}", r.name)),
                };
                match partner {
                    Some(p) => r.values.iter().zip(&p.values).map(|(a, b)| a <= b).collect(),
                    None => vec![false; r.values.len()],
                }
            })
            .collect()
    }

    /// Columns where `challenger` is strictly below `reference`.
    pub fn wins(&self, challenger: &str, reference: &str) -> Option<usize> {
        let (a, b) = (self.row(challenger)?, self.row(reference)?);
        Some(a.values.iter().zip(&b.values).filter(|(x, y)| x < y).count())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["approximation"];
        header.extend(COLUMNS);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.name.clone()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() != COLUMNS.len() + 1 || header[1..].iter().zip(COLUMNS).any(|(a, b)| a != b) {
            return Err(Error::invalid("unexpected error-table header"));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let values = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| Error::invalid(format!("bad cell `{v}`: {e}"))))
                .collect::<Result<_>>()?;
            rows.push(ErrorRow {
                name: rec[0].to_string(),
                values,
            });
        }
        Ok(Self { rows })
    }

    /// Markdown rendering with the best entry of each pair in bold.
    pub fn to_markdown(&self) -> String {
        let bold = self.best_in_pair();
        let mut s = format!("| approximation | {} |\n", COLUMNS.join(" | "));
        s.push_str(&format!("|---|{}\n", "---:|".repeat(COLUMNS.len())));
        for (r, marks) in self.rows.iter().zip(bold) {
            let cells: Vec<String> = r
                .values
                .iter()
                .zip(marks)
                .map(|(v, b)| if b { format!("**{v:.4}**") } else { format!("{v:.4}") })
                .collect();
            s.push_str(&format!("| {} | {} |\n", r.name, cells.join(" | ")));
        }
        s
    }
}

/// Options for [`run_compare`].
#[derive(Debug, Clone)]
pub struct CompareOptions {
    /// Draws per approximation.
    pub n_draws: usize,
    pub mcmc: McmcConfig,
    /// Largest baseline R̂ accepted as ground truth.
    pub max_r_hat: f64,
    pub seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            n_draws: 10_000,
            mcmc: McmcConfig::default(),
            max_r_hat: 1.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareOutcome {
    pub table: ErrorTable,
    pub best_in_pair: Vec<Vec<bool>>,
    pub baseline: FunctionalSummary,
    pub summaries: Vec<(String, FunctionalSummary)>,
    pub diagnostics: ChainDiagnostics,
}

/// Runs the reference sampler, draws from every base approximation and its
/// skewed counterpart, and tabulates errors of the eight functionals.
///
/// Fails before drawing any approximation if the baseline R̂ exceeds
/// `opts.max_r_hat`.
pub fn run_compare(
    model: &BatteryModel,
    fits: &[(ApproxKind, SymmetricApproximation)],
    opts: &CompareOptions,
) -> Result<CompareOutcome> {
    let chains = match opts.mcmc.algorithm {
        Algorithm::Hmc => hmc_sample(model.model.as_ref(), &opts.mcmc)?,
        Algorithm::Rwm => rwm_sample(model.model.as_ref(), &opts.mcmc)?,
    };
    let r_hat = chains.diagnostics.max_r_hat();
    if r_hat > opts.max_r_hat {
        return Err(Error::UntrustedBaseline {
            max_r_hat: r_hat,
            limit: opts.max_r_hat,
        });
    }
    let glm = model.glm.as_deref();
    let baseline = summarize(&chains.pooled(), glm)?;
    let mut summaries = Vec::new();
    for (kind, base) in fits {
        let name = kind.name();
        let sym = sample_symmetric_seeded(base, opts.n_draws, derive_seed(opts.seed, &format!("compare/{name}")));
        summaries.push((name.to_string(), summarize(&sym, glm)?));
        let skew = model.perturb(base.clone())?;
        let draws = skew.sample_seeded(opts.n_draws, derive_seed(opts.seed, &format!("compare/skew-{name}")))?;
        summaries.push((format!("skew-{name}"), summarize(&draws, glm)?));
    }
    let table = error_table(&summaries, &baseline)?;
    Ok(CompareOutcome {
        best_in_pair: table.best_in_pair(),
        table,
        baseline,
        summaries,
        diagnostics: chains.diagnostics,
    })
}

/// Fits each requested kind, keeping failures per kind.
pub fn fit_all(
    model: &BatteryModel,
    kinds: &[ApproxKind],
    opts: &FitOptions,
) -> Vec<(ApproxKind, Result<SymmetricApproximation>)> {
    kinds.iter().map(|&k| (k, model.fit(k, opts))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateVariant {
    /// Laplace approximation `f*₁`.
    Symmetric,
    /// `q*₁ = 2 f*₁ w*`.
    SkewLaplace,
    /// `q*₂ = 2 f*₂ w*` with the polynomial-corrected base.
    SkewSnp,
}

impl RateVariant {
    pub const ALL: [RateVariant; 3] = [RateVariant::Symmetric, RateVariant::SkewLaplace, RateVariant::SkewSnp];

    pub fn label(self) -> &'static str {
        match self {
            RateVariant::Symmetric => "f1",
            RateVariant::SkewLaplace => "q1",
            RateVariant::SkewSnp => "q2",
        }
    }
}

/// Data-generating family for the rate experiment.
pub trait RateFamily: Sync {
    fn name(&self) -> &str;

    /// Posterior for `n` simulated observations.
    fn generate(&self, n: usize, seed: u64) -> Result<BatteryModel>;
}

/// `y_i ~ Exp(e^{θ₀})` with a wide Gaussian prior on `θ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentialRateFamily {
    pub theta0: f64,
    pub prior_var: f64,
}

impl Default for ExponentialRateFamily {
    fn default() -> Self {
        Self {
            theta0: 0.0,
            prior_var: 100.0,
        }
    }
}

impl RateFamily for ExponentialRateFamily {
    fn name(&self) -> &str {
        "exponential"
    }

    fn generate(&self, n: usize, seed: u64) -> Result<BatteryModel> {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y = simulate_exponential(n, self.theta0, &mut rng);
        Ok(BatteryModel::from_model("exponential", exponential_rate_model(&y, self.prior_var)?))
    }
}

/// `y_i ~ N(θ₀, 1)` with a Gaussian prior: an exactly Gaussian posterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugateGaussianFamily {
    pub theta0: f64,
    pub prior_var: f64,
}

impl Default for ConjugateGaussianFamily {
    fn default() -> Self {
        Self {
            theta0: 0.5,
            prior_var: 4.0,
        }
    }
}

impl RateFamily for ConjugateGaussianFamily {
    fn name(&self) -> &str {
        "conjugate"
    }

    fn generate(&self, n: usize, seed: u64) -> Result<BatteryModel> {
        Ok(BatteryModel::from_glm(
            "conjugate",
            conjugate_gaussian_sample(n, self.theta0, self.prior_var, seed)?,
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateOptions {
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Grid nodes per dimension for the quadrature.
    pub grid_points: usize,
    /// Grid half-width in Laplace standard deviations.
    pub grid_half_width: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            sample_sizes: vec![25, 50, 100, 200, 400, 800, 1600, 3200, 6400],
            replicates: 20,
            seed: 0,
            grid_points: 4096,
            grid_half_width: 12.0,
        }
    }
}

impl RateOptions {
    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() || self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("rates.sample_sizes must be non-empty and strictly increasing".into()));
        }
        if self.sample_sizes[0] == 0 {
            return Err(Error::Config("rates.sample_sizes must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("rates.replicates must be positive".into()));
        }
        if self.grid_points < 64 || self.grid_half_width <= 0.0 {
            return Err(Error::Config("rates grid needs ≥ 64 points and a positive half-width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub variant: RateVariant,
    pub label: String,
    pub sample_sizes: Vec<usize>,
    /// Median total variation over replicates, per sample size.
    pub tv_values: Vec<f64>,
    /// `replicate_tv[k][r]` for sample size `k` and replicate `r`.
    pub replicate_tv: Vec<Vec<f64>>,
    /// Least-squares slope of `log TV` against `log n`.
    pub fitted_slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    /// Why the slope was not fitted, when it was not.
    pub slope_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub label: String,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExperiment {
    pub family: String,
    pub curves: Vec<RateCurve>,
    /// Quadrature grid of every `(n, replicate)` job.
    pub grids: Vec<GridRecord>,
}

/// TV values at or below this are treated as exact agreement.
pub const TV_MACHINE_ZERO: f64 = 1e-12;

/// Ordinary least-squares slope and its standard error.
pub fn fit_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let se = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, se)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

/// TV from the posterior to each variant for one simulated data set. The
/// grid spans the Laplace center ± `half_width` standard deviations and
/// doubles in width while the quadrature reports a mass deficit.
fn rate_job(model: &BatteryModel, variants: &[RateVariant], opts: &RateOptions) -> Result<(Vec<f64>, GridSpec)> {
    let post = model.model.as_ref();
    let la = fit_laplace(post, &vec![0.0; post.dim()], &Default::default())?;
    let bases: Vec<SymmetricApproximation> = variants
        .iter()
        .map(|v| match v {
            RateVariant::SkewSnp => build_snp(post, &la),
            _ => Ok(la.clone()),
        })
        .collect::<Result<_>>()?;
    let skews = variants
        .iter()
        .zip(&bases)
        .map(|(v, b)| match v {
            RateVariant::Symmetric => Ok(None),
            _ => model.perturb(b.clone()).map(Some),
        })
        .collect::<Result<Vec<_>>>()?;
    let cov = la.gaussian().covariance();
    let center = la.center().as_slice().to_vec();
    let mut widen = 1.0;
    let mut last_err = None;
    for _ in 0..4 {
        let lo: Vec<f64> = (0..center.len())
            .map(|j| center[j] - widen * opts.grid_half_width * cov[(j, j)].sqrt())
            .collect();
        let hi: Vec<f64> = (0..center.len())
            .map(|j| center[j] + widen * opts.grid_half_width * cov[(j, j)].sqrt())
            .collect();
        let grid = GridSpec::new(lo, hi, opts.grid_points)?;
        let raw = GridValues::new(&grid, &|t: &[f64]| post.log_density(t))?;
        let log_z = raw.log_mass();
        let posterior = raw.map(|v| v - log_z);
        let attempt: Result<Vec<f64>> = bases
            .iter()
            .zip(&skews)
            .map(|(b, s)| {
                let q = match s {
                    Some(s) => GridValues::new(&grid, &|t: &[f64]| s.log_pdf(t).unwrap_or(f64::NAN))?,
                    None => GridValues::new(&grid, &|t: &[f64]| b.log_pdf(t))?,
                };
                Ok(divergence_from_values(DivergenceKind::Tv, &posterior, &q)?.value)
            })
            .collect();
        match attempt {
            Ok(tv) => return Ok((tv, grid)),
            Err(e @ Error::DomainTooSmall { .. }) => {
                last_err = Some(e);
                widen *= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("loop ran"))
}

/// Median TV across replicates for each sample size and variant, with a
/// log-log slope per variant.
pub fn rate_experiment(family: &dyn RateFamily, variants: &[RateVariant], opts: &RateOptions) -> Result<RateExperiment> {
    opts.validate()?;
    let jobs: Vec<(usize, usize)> = opts
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..opts.replicates).map(move |r| (n, r)))
        .collect();
    let results: Vec<(Vec<f64>, GridSpec)> = jobs
        .par_iter()
        .map(|&(n, r)| {
            let seed = derive_index(derive_seed(opts.seed, &format!("rates/{}/n={n}", family.name())), r as u64);
            rate_job(&family.generate(n, seed)?, variants, opts)
        })
        .collect::<Result<_>>()?;
    let grids = jobs
        .iter()
        .zip(&results)
        .map(|(&(n, r), (_, g))| GridRecord {
            label: format!("n={n}/replicate={r}"),
            grid: g.clone(),
        })
        .collect();
    let curves = variants
        .iter()
        .enumerate()
        .map(|(vi, &variant)| {
            let replicate_tv: Vec<Vec<f64>> = results
                .chunks(opts.replicates)
                .map(|chunk| chunk.iter().map(|(tv, _)| tv[vi]).collect())
                .collect();
            let tv_values: Vec<f64> = replicate_tv.iter().map(|r| median(r)).collect();
            let (fitted_slope, slope_stderr, slope_note) = if tv_values.len() < 2 {
                (None, None, Some("a single sample size has no slope".to_string()))
            } else if tv_values.iter().any(|&v| v <= TV_MACHINE_ZERO) {
                (None, None, Some(format!("TV at or below {TV_MACHINE_ZERO:e}; slope not fitted")))
            } else {
                let x: Vec<f64> = opts.sample_sizes.iter().map(|&n| (n as f64).ln()).collect();
                let y: Vec<f64> = tv_values.iter().map(|v| v.ln()).collect();
                let (s, se) = fit_slope(&x, &y);
                (Some(s), se.is_finite().then_some(se), None)
            };
            RateCurve {
                variant,
                label: variant.label().to_string(),
                sample_sizes: opts.sample_sizes.clone(),
                tv_values,
                replicate_tv,
                fitted_slope,
                slope_stderr,
                slope_note,
            }
        })
        .collect();
    Ok(RateExperiment {
        family: family.name().to_string(),
        curves,
        grids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSection {
    pub name: String,
    pub table: ErrorTable,
    pub best_in_pair: Vec<Vec<bool>>,
}

impl TableSection {
    pub fn new(name: &str, table: ErrorTable) -> Self {
        Self {
            name: name.to_string(),
            best_in_pair: table.best_in_pair(),
            table,
        }
    }
}

/// Machine-readable record of one command run. Everything except
/// `timestamp` is a deterministic function of the configuration and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub config: serde_json::Value,
    pub tolerances: BTreeMap<String, f64>,
    pub grids: Vec<GridRecord>,
    pub tables: Vec<TableSection>,
    pub curves: Vec<RateCurve>,
    pub diagnostics: Option<ChainDiagnostics>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            schema_version: SCHEMA_VERSION,
            version: VERSION.to_string(),
            command: command.to_string(),
            seed,
            timestamp,
            config,
            tolerances: BTreeMap::new(),
            grids: Vec::new(),
            tables: Vec::new(),
            curves: Vec::new(),
            diagnostics: None,
            warnings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Writes `report.json`, one `<table>.csv` per table and `rates.csv` when
/// there are curves. Returns the report path.
pub fn emit_report(report: &Report, dir: &Path) -> Result<PathBuf> {
    if report.tables.is_empty() && report.curves.is_empty() {
        return Err(Error::invalid("a report needs at least one table or curve"));
    }
    fs::create_dir_all(dir)?;
    for t in &report.tables {
        fs::write(dir.join(format!("{}.csv", t.name)), t.table.to_csv()?)?;
    }
    if !report.curves.is_empty() {
        fs::write(dir.join("rates.csv"), curves_csv(&report.curves)?)?;
    }
    let path = dir.join("report.json");
    fs::write(&path, report.to_json()? + "\n")?;
    Ok(path)
}

/// Long-format CSV: one row per (variant, sample size).
pub fn curves_csv(curves: &[RateCurve]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "n", "median_tv"])?;
    for c in curves {
        for (n, tv) in c.sample_sizes.iter().zip(&c.tv_values) {
            w.write_record([c.label.clone(), n.to_string(), tv.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
