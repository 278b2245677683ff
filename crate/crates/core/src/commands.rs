//! The `fit`, `sample`, `compare`, `rates` and `verify` commands. Each one
//! computes in parallel and writes its files from the calling thread.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::approx::{ApproxKind, SymmetricApproximation};
use crate::bench::{
    emit_report, rate_experiment, run_compare, CompareOptions, ConjugateGaussianFamily, ExponentialRateFamily,
    RateFamily, RateVariant, Report, TableSection, TV_MACHINE_ZERO,
};
use crate::config::{ModelSpec, RunConfig};
use crate::divergence::MASS_TOLERANCE;
use crate::error::{Error, Result};
use crate::io::{write_samples_bin, write_samples_csv};
use crate::models::BatteryModel;
use crate::seed::derive_seed;
use crate::skew::sample_symmetric_seeded;
use crate::verify::{run_verify, VerifyReport, EQUALITY_TOL, FACTOR_TOL, INEQUALITY_TOL};

/// Progress output, silenced by `--quiet`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Console {
    pub quiet: bool,
}

impl Console {
    pub fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

/// On-disk record of a skew-symmetric approximation. The skewness factor is
/// rebuilt from the model and the base center when loaded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkewArtifact {
    pub kind: String,
    pub base: SymmetricApproximation,
    pub center: Vec<f64>,
    pub skewness_factor: String,
    pub model: ModelSpec,
}

fn artifact_path(out: &Path, kind: ApproxKind) -> PathBuf {
    out.join(format!("{}.json", kind.name()))
}

#[derive(Debug, Default)]
pub struct FitOutcome {
    pub written: Vec<PathBuf>,
    /// `(kind, error message)` for every fit that failed.
    pub failures: Vec<(String, String)>,
}

/// Fits every configured approximation and writes it together with its
/// skewed counterpart. A failed fit is recorded and the batch continues.
pub fn cmd_fit(cfg: &RunConfig, out: &Path, console: Console) -> Result<FitOutcome> {
    let model = cfg.build_model()?;
    fs::create_dir_all(out)?;
    let mut outcome = FitOutcome::default();
    for (i, kind) in cfg.kinds()?.into_iter().enumerate() {
        let name = kind.name();
        match model.fit(kind, &cfg.fit_options(i)?) {
            Ok(base) => {
                let path = artifact_path(out, kind);
                fs::write(&path, base.to_json()? + "\n")?;
                let skew = SkewArtifact {
                    kind: format!("skew-{name}"),
                    center: base.center().as_slice().to_vec(),
                    base,
                    skewness_factor: "logistic(log pi(theta) - log pi(2 center - theta))".into(),
                    model: cfg.model.clone(),
                };
                let skew_path = out.join(format!("skew-{name}.json"));
                fs::write(&skew_path, serde_json::to_string_pretty(&skew)? + "\n")?;
                console.say(format!("fit {name}: wrote {} and {}", path.display(), skew_path.display()));
                outcome.written.extend([path, skew_path]);
            }
            Err(e) => {
                console.say(format!("fit {name}: FAILED ({e})"));
                outcome.failures.push((name.to_string(), e.to_string()));
            }
        }
    }
    Ok(outcome)
}

/// Loads `<kind>.json` from `out` when present, fitting otherwise.
fn load_or_fit(cfg: &RunConfig, model: &BatteryModel, out: &Path, i: usize, kind: ApproxKind) -> Result<SymmetricApproximation> {
    let path = artifact_path(out, kind);
    if path.is_file() {
        let approx = SymmetricApproximation::from_json(&fs::read_to_string(&path)?)?;
        if approx.kind() != kind || approx.dim() != model.dim() {
            return Err(Error::Config(format!("{} does not match the configured model", path.display())));
        }
        return Ok(approx);
    }
    model.fit(kind, &cfg.fit_options(i)?)
}

/// Draws from each configured approximation and its skewed counterpart.
pub fn cmd_sample(cfg: &RunConfig, out: &Path, console: Console) -> Result<Vec<PathBuf>> {
    let model = cfg.build_model()?;
    fs::create_dir_all(out)?;
    let names = model.model.column_names();
    let mut written = Vec::new();
    for (i, kind) in cfg.kinds()?.into_iter().enumerate() {
        let name = kind.name();
        let base = load_or_fit(cfg, &model, out, i, kind)?;
        let sym = sample_symmetric_seeded(&base, cfg.sample.n_draws, derive_seed(cfg.seed, &format!("sample/{name}")));
        let skew = model
            .perturb(base)?
            .sample_seeded(cfg.sample.n_draws, derive_seed(cfg.seed, &format!("sample/skew-{name}")))?;
        for (label, draws) in [(name.to_string(), sym), (format!("skew-{name}"), skew)] {
            let path = if cfg.sample.format == "binary" {
                let p = out.join(format!("samples-{label}.bin"));
                write_samples_bin(&p, &draws)?;
                p
            } else {
                let p = out.join(format!("samples-{label}.csv"));
                write_samples_csv(&p, &draws, &names)?;
                p
            };
            console.say(format!("sample {label}: {} draws to {}", draws.nrows(), path.display()));
            written.push(path);
        }
    }
    Ok(written)
}

/// Error table of every configured approximation and its skewed
/// counterpart against the reference sampler.
pub fn cmd_compare(cfg: &RunConfig, out: &Path, console: Console) -> Result<(Report, PathBuf)> {
    let model = cfg.build_model()?;
    let mut report = Report::new("compare", cfg.seed, cfg.to_json_value());
    let mut fits = Vec::new();
    for (i, kind) in cfg.kinds()?.into_iter().enumerate() {
        match load_or_fit(cfg, &model, out, i, kind) {
            Ok(f) => fits.push((kind, f)),
            Err(e) => {
                console.say(format!("compare: {} skipped ({e})", kind.name()));
                report.warnings.push(format!("{} fit failed: {e}", kind.name()));
            }
        }
    }
    if fits.is_empty() {
        return Err(Error::State("no approximation could be fitted".into()));
    }
    let opts = CompareOptions {
        n_draws: cfg.compare.n_draws,
        mcmc: cfg.mcmc_config(),
        max_r_hat: cfg.compare.max_r_hat,
        seed: derive_seed(cfg.seed, "compare"),
    };
    console.say(format!(
        "compare: {} chains × {} draws of the reference sampler",
        opts.mcmc.n_chains, opts.mcmc.n_keep
    ));
    let outcome = run_compare(&model, &fits, &opts)?;
    report.tolerances.insert("max_r_hat".into(), opts.max_r_hat);
    report.warnings.extend(outcome.diagnostics.warnings.iter().cloned());
    for (name, s) in &outcome.summaries {
        report.warnings.extend(s.warnings.iter().map(|w| format!("{name}: {w}")));
    }
    report.diagnostics = Some(outcome.diagnostics);
    console.say(outcome.table.to_markdown());
    report.tables.push(TableSection::new("errors", outcome.table));
    let path = emit_report(&report, out)?;
    console.say(format!("compare: report at {}", path.display()));
    Ok((report, path))
}

/// Convergence-rate curves for `f*₁`, `q*₁` and `q*₂`.
pub fn cmd_rates(cfg: &RunConfig, out: &Path, console: Console) -> Result<(Report, PathBuf)> {
    let family: Box<dyn RateFamily> = match cfg.rates.family.as_str() {
        "conjugate" => Box::new(ConjugateGaussianFamily {
            theta0: cfg.rates.theta0,
            prior_var: cfg.rates.prior_var,
        }),
        _ => Box::new(ExponentialRateFamily {
            theta0: cfg.rates.theta0,
            prior_var: cfg.rates.prior_var,
        }),
    };
    let opts = cfg.rate_options();
    let exp = rate_experiment(family.as_ref(), &RateVariant::ALL, &opts)?;
    let mut report = Report::new("rates", cfg.seed, cfg.to_json_value());
    report.tolerances.insert("mass".into(), MASS_TOLERANCE);
    report.tolerances.insert("tv_machine_zero".into(), TV_MACHINE_ZERO);
    for c in &exp.curves {
        match (c.fitted_slope, c.slope_stderr) {
            (Some(s), Some(se)) => console.say(format!("rates {}: slope {s:.3} ± {se:.3}", c.label)),
            (Some(s), None) => console.say(format!("rates {}: slope {s:.3}", c.label)),
            _ => console.say(format!(
                "rates {}: slope undefined ({})",
                c.label,
                c.slope_note.as_deref().unwrap_or("")
            )),
        }
    }
    report.grids = exp.grids;
    report.curves = exp.curves;
    let path = emit_report(&report, out)?;
    console.say(format!("rates: report at {}", path.display()));
    Ok((report, path))
}

/// Runs the invariant battery and writes `verify.json`.
pub fn cmd_verify(cfg: &RunConfig, out: &Path, console: Console) -> Result<(VerifyReport, PathBuf)> {
    let report = run_verify(&cfg.verify_options()?);
    fs::create_dir_all(out)?;
    let path = out.join("verify.json");
    #[derive(Serialize)]
    struct Doc<'a> {
        version: &'a str,
        tolerances: [(&'a str, f64); 3],
        #[serde(flatten)]
        report: &'a VerifyReport,
    }
    let doc = Doc {
        version: crate::bench::VERSION,
        tolerances: [("equality", EQUALITY_TOL), ("inequality", INEQUALITY_TOL), ("factor", FACTOR_TOL)],
        report: &report,
    };
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
    for c in report.failures() {
        console.say(format!(
            "FAIL {}/{}/{}/{}: value {:e}, tolerance {:e}{}",
            c.suite,
            c.model,
            c.base,
            c.check,
            c.value,
            c.tolerance,
            c.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
        ));
    }
    console.say(format!(
        "verify: {} checks, {} failed; report at {}",
        report.n_checks,
        report.n_failed,
        path.display()
    ));
    Ok((report, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config(extra: &str) -> RunConfig {
        let text = format!(
            "seed = 5\n[[approximations]]\nkind = \"la\"\n[mcmc]\nn_warmup = 300\nn_keep = 1000\n{extra}"
        );
        RunConfig::from_toml(&text, Path::new(".")).unwrap()
    }

    #[test]
    fn fit_writes_base_and_skew_artifacts_deterministically() {
        let cfg = quick_config("");
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let q = Console { quiet: true };
        let out = cmd_fit(&cfg, a.path(), q).unwrap();
        assert!(out.failures.is_empty());
        let names: Vec<String> = out.written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into()).collect();
        assert_eq!(names, vec!["la.json", "skew-la.json"]);
        cmd_fit(&cfg, b.path(), q).unwrap();
        for n in &names {
            assert_eq!(fs::read(a.path().join(n)).unwrap(), fs::read(b.path().join(n)).unwrap());
        }
        let skew: SkewArtifact = serde_json::from_str(&fs::read_to_string(a.path().join("skew-la.json")).unwrap()).unwrap();
        assert_eq!(skew.center.len(), 16);
    }

    #[test]
    fn sample_writes_both_formats() {
        let q = Console { quiet: true };
        let dir = tempfile::tempdir().unwrap();
        let csv = cmd_sample(&quick_config("[sample]\nn_draws = 50"), dir.path(), q).unwrap();
        assert_eq!(csv.len(), 2);
        let (m, names) = crate::io::read_samples_csv(fs::File::open(&csv[1]).unwrap()).unwrap();
        assert_eq!((m.nrows(), m.ncols(), names[0].as_str()), (50, 16, "(Intercept)"));
        let bin = cmd_sample(&quick_config("[sample]\nn_draws = 50\nformat = \"binary\""), dir.path(), q).unwrap();
        let m2 = crate::io::read_samples_bin(fs::File::open(&bin[1]).unwrap()).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn compare_prefit_and_on_demand_agree() {
        let cfg = quick_config("[compare]\nn_draws = 2000");
        let q = Console { quiet: true };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        cmd_fit(&cfg, a.path(), q).unwrap();
        let (ra, _) = cmd_compare(&cfg, a.path(), q).unwrap();
        let (rb, _) = cmd_compare(&cfg, b.path(), q).unwrap();
        assert_eq!(ra.tables, rb.tables);
        assert_eq!(fs::read(a.path().join("errors.csv")).unwrap(), fs::read(b.path().join("errors.csv")).unwrap());
    }

    #[test]
    fn verify_restricted_to_conjugate_models_passes() {
        let cfg = quick_config(
            "[verify]\nmodels = [\"conjugate-1d\"]\nkinds = [\"la\"]\nrandom_skewing_functions = 5\nks_draws = 2000\nhistogram_draws = 20000",
        );
        let dir = tempfile::tempdir().unwrap();
        let (report, path) = cmd_verify(&cfg, dir.path(), Console { quiet: true }).unwrap();
        assert!(report.passed, "{:?}", report.failures().collect::<Vec<_>>());
        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(doc["passed"], true);
        for c in report.checks.iter().filter(|c| c.suite == "divergence-equality") {
            assert!(c.value <= 1e-8);
        }
    }
}
