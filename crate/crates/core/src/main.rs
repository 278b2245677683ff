use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use skewfit::commands::{cmd_compare, cmd_fit, cmd_rates, cmd_sample, cmd_verify, Console};
use skewfit::config::{ApproxSpec, RunConfig};
use skewfit::Error;

const EXIT_SUITE_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Skew-symmetric adjustments of Laplace, Gaussian variational and
/// expectation-propagation posterior approximations.
#[derive(Parser, Debug)]
#[command(name = "skewfit", version, about)]
struct Cli {
    /// TOML run configuration. Without one the bundled Poisson example is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated approximation kinds (la, gvb, gep, snp).
    #[arg(long, global = true, value_delimiter = ',')]
    approx: Option<Vec<String>>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit each approximation and its skewed counterpart.
    Fit,
    /// Draw samples from each approximation and its skewed counterpart.
    Sample,
    /// Error table against the reference sampler.
    Compare,
    /// Convergence-rate experiment.
    Rates,
    /// Run the invariant battery; exits 1 on any failure.
    Verify,
}

fn load_config(cli: &Cli) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let mut cfg = RunConfig::from_file(path)?;
            if cfg.output_dir.is_relative() {
                cfg.output_dir = cfg.base_dir.join(&cfg.output_dir);
            }
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(kinds) = &cli.approx {
        cfg.approximations = kinds
            .iter()
            .map(|k| ApproxSpec {
                kind: k.trim().to_string(),
                options: None,
            })
            .collect();
    }
    cfg.validate()?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("SKEWFIT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("SKEWFIT_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<u8, Error> {
    configure_threads()?;
    let (cfg, out) = load_config(cli)?;
    let console = Console { quiet: cli.quiet };
    match cli.command {
        Command::Fit => {
            let outcome = cmd_fit(&cfg, &out, console)?;
            Ok(if outcome.failures.is_empty() { 0 } else { EXIT_NUMERIC })
        }
        Command::Sample => cmd_sample(&cfg, &out, console).map(|_| 0),
        Command::Compare => cmd_compare(&cfg, &out, console).map(|_| 0),
        Command::Rates => cmd_rates(&cfg, &out, console).map(|_| 0),
        Command::Verify => {
            let (report, _) = cmd_verify(&cfg, &out, console)?;
            Ok(if report.passed { 0 } else { EXIT_SUITE_FAILURE })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_NUMERIC,
            })
        }
    }
}
