//! Reference posterior sampling: adaptive random-walk Metropolis and
//! fixed-length Hamiltonian Monte Carlo, with split-R̂ and ESS diagnostics.
//!
//! Chains start at the posterior mode, run on independent ChaCha streams
//! derived from `(seed, chain index)`, and are merged in chain order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{map_estimate, LaplaceOptions};
use crate::error::{Error, Result};
use crate::model::{log_posterior_gradient, log_posterior_hessian, Posterior};
use crate::seed::{derive_index, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Rwm,
    Hmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    /// Kept draws per chain.
    pub n_keep: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Nominal leapfrog steps; each trajectory draws its length uniformly
    /// within ±20% of this value.
    pub hmc_leapfrog_steps: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 2000,
            n_keep: 10_000,
            seed: 0,
            algorithm: Algorithm::Hmc,
            hmc_leapfrog_steps: 32,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 2 {
            return Err(Error::Config("mcmc.n_chains must be at least 2".into()));
        }
        if self.n_keep < 1000 {
            return Err(Error::Config("mcmc.n_keep must be at least 1000".into()));
        }
        if self.algorithm == Algorithm::Hmc && self.hmc_leapfrog_steps == 0 {
            return Err(Error::Config("mcmc.hmc_leapfrog_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Split-R̂ per coordinate; 1 where it is undefined.
    pub r_hat: Vec<f64>,
    /// Coordinates whose draws have zero variance in every chain half.
    pub r_hat_undefined: Vec<bool>,
    pub ess: Vec<f64>,
    /// Fraction of accepted proposals after warmup, per chain.
    pub accept_rate: Vec<f64>,
    /// Mean `H(start) - H(end)` per chain (HMC only).
    pub mean_energy_change: Vec<f64>,
    /// Tuned leapfrog step size per chain (HMC only).
    pub step_size: Vec<f64>,
    pub divergent_transitions: usize,
    pub warnings: Vec<String>,
}

impl ChainDiagnostics {
    pub fn max_r_hat(&self) -> f64 {
        self.r_hat.iter().copied().fold(1.0, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct McmcOutput {
    /// One `n_keep × d` matrix per chain.
    pub chains: Vec<DMatrix<f64>>,
    pub diagnostics: ChainDiagnostics,
}

impl McmcOutput {
    /// All chains stacked in chain order.
    pub fn pooled(&self) -> DMatrix<f64> {
        let d = self.chains[0].ncols();
        let n: usize = self.chains.iter().map(|c| c.nrows()).sum();
        let mut out = DMatrix::zeros(n, d);
        let mut row = 0;
        for c in &self.chains {
            out.rows_mut(row, c.nrows()).copy_from(c);
            row += c.nrows();
        }
        out
    }
}

struct ChainRun {
    draws: DMatrix<f64>,
    accept_rate: f64,
    energy_change: f64,
    step_size: f64,
    divergent: usize,
}

pub fn sample(model: &dyn Posterior, cfg: &McmcConfig) -> Result<McmcOutput> {
    match cfg.algorithm {
        Algorithm::Rwm => rwm_sample(model, cfg),
        Algorithm::Hmc => hmc_sample(model, cfg),
    }
}

fn start_point(model: &dyn Posterior) -> Result<DVector<f64>> {
    let mode = map_estimate(model, &vec![0.0; model.dim()], &LaplaceOptions::default())?;
    if !model.log_density(mode.as_slice()).is_finite() {
        return Err(Error::invalid("log posterior is not finite at the mode"));
    }
    Ok(mode)
}

fn run_chains(
    cfg: &McmcConfig,
    task: &str,
    chain: impl Fn(usize, &mut ChaCha8Rng) -> Result<ChainRun> + Sync,
) -> Result<McmcOutput> {
    cfg.validate()?;
    let base = derive_seed(cfg.seed, task);
    let runs: Vec<ChainRun> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_index(base, c as u64));
            chain(c, &mut rng)
        })
        .collect::<Result<_>>()?;
    let chains: Vec<DMatrix<f64>> = runs.iter().map(|r| r.draws.clone()).collect();
    let mut diagnostics = diagnostics(&chains)?;
    diagnostics.accept_rate = runs.iter().map(|r| r.accept_rate).collect();
    if cfg.algorithm == Algorithm::Hmc {
        diagnostics.mean_energy_change = runs.iter().map(|r| r.energy_change).collect();
        diagnostics.step_size = runs.iter().map(|r| r.step_size).collect();
        diagnostics.divergent_transitions = runs.iter().map(|r| r.divergent).sum();
        let kept = (cfg.n_chains * cfg.n_keep) as f64;
        if diagnostics.divergent_transitions as f64 > 0.01 * kept {
            diagnostics.warnings.push(format!(
                "{} divergent transitions ({:.2}% of draws)",
                diagnostics.divergent_transitions,
                100.0 * diagnostics.divergent_transitions as f64 / kept
            ));
        }
    }
    Ok(McmcOutput { chains, diagnostics })
}

/// Running mean and covariance.
struct Welford {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.n += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    /// Sample covariance shrunk slightly toward a small multiple of the
    /// identity so that short windows stay positive definite.
    fn regularized_cov(&self) -> DMatrix<f64> {
        let n = self.n as f64;
        let d = self.mean.len();
        let cov = &self.m2 / (n - 1.0).max(1.0);
        cov * (n / (n + 5.0)) + DMatrix::identity(d, d) * (1e-3 * 5.0 / (n + 5.0))
    }
}

/// Gaussian-proposal Metropolis. The proposal covariance starts at
/// `2.38²/d` times the inverse curvature at the mode and is re-estimated from
/// the warmup draws every 50 iterations, then frozen.
pub fn rwm_sample(model: &dyn Posterior, cfg: &McmcConfig) -> Result<McmcOutput> {
    let mode = start_point(model)?;
    let d = model.dim();
    let scale = 2.38f64.powi(2) / d as f64;
    let initial_cov = (-log_posterior_hessian(model, mode.as_slice()))
        .try_inverse()
        .filter(|c| c.clone().cholesky().is_some())
        .unwrap_or_else(|| DMatrix::identity(d, d));
    run_chains(cfg, "mcmc/rwm", |chain, rng| {
        let mut theta = mode.clone();
        let mut lp = model.log_density(theta.as_slice());
        let mut chol = (&initial_cov * scale).cholesky().expect("checked above").l();
        let mut stats = Welford::new(d);
        let mut warm_accepts = 0usize;
        let mut accepts = 0usize;
        let mut draws = DMatrix::zeros(cfg.n_keep, d);
        for it in 0..cfg.n_warmup + cfg.n_keep {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let prop = &theta + &chol * z;
            let lp_prop = model.log_density(prop.as_slice());
            let u: f64 = rng.random();
            let accepted = lp_prop.is_finite() && u.ln() < lp_prop - lp;
            if accepted {
                theta = prop;
                lp = lp_prop;
            }
            if it < cfg.n_warmup {
                warm_accepts += accepted as usize;
                stats.push(&theta);
                if (it + 1) % 50 == 0 && stats.n >= 100 {
                    if let Some(c) = (stats.regularized_cov() * scale).cholesky() {
                        chol = c.l();
                    }
                }
                if it + 1 == cfg.n_warmup && warm_accepts == 0 {
                    return Err(Error::StuckChain { chain });
                }
            } else {
                accepts += accepted as usize;
                draws.row_mut(it - cfg.n_warmup).copy_from(&theta.transpose());
            }
        }
        Ok(ChainRun {
            draws,
            accept_rate: accepts as f64 / cfg.n_keep as f64,
            energy_change: 0.0,
            step_size: 0.0,
            divergent: 0,
        })
    })
}

const TARGET_ACCEPT: f64 = 0.8;
const DIVERGENCE_ENERGY: f64 = 1000.0;

/// Nesterov dual averaging of `log ε` toward a target acceptance.
struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    fn new(eps: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: 0.0,
            t: 0.0,
        }
    }

    fn update(&mut self, accept_prob: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.t += 1.0;
        let eta = 1.0 / (self.t + T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (TARGET_ACCEPT - accept_prob);
        self.log_eps = self.mu - self.t.sqrt() / GAMMA * self.h_bar;
        let w = self.t.powf(-KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct Hamiltonian<'a> {
    model: &'a dyn Posterior,
    /// Diagonal inverse mass matrix.
    inv_mass: DVector<f64>,
}

struct Trajectory {
    theta: DVector<f64>,
    log_density: f64,
    grad: DVector<f64>,
    accept_prob: f64,
    energy_change: f64,
    divergent: bool,
}

impl Hamiltonian<'_> {
    fn kinetic(&self, p: &DVector<f64>) -> f64 {
        0.5 * p.iter().zip(self.inv_mass.iter()).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn momentum<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.inv_mass.len(), |j, _| {
            rng.sample::<f64, _>(StandardNormal) / self.inv_mass[j].sqrt()
        })
    }

    fn leapfrog(
        &self,
        theta: &DVector<f64>,
        lp: f64,
        grad: &DVector<f64>,
        p0: DVector<f64>,
        eps: f64,
        steps: usize,
    ) -> Trajectory {
        let h0 = -lp + self.kinetic(&p0);
        let mut q = theta.clone();
        let mut p = p0;
        let mut g = grad.clone();
        let mut lq = lp;
        for _ in 0..steps {
            p.axpy(0.5 * eps, &g, 1.0);
            q += eps * p.component_mul(&self.inv_mass);
            lq = self.model.log_density(q.as_slice());
            if !lq.is_finite() {
                break;
            }
            g = log_posterior_gradient(self.model, q.as_slice());
            p.axpy(0.5 * eps, &g, 1.0);
        }
        let h1 = -lq + self.kinetic(&p);
        let delta = h0 - h1;
        let divergent = !delta.is_finite() || -delta > DIVERGENCE_ENERGY;
        let accept_prob = if delta.is_nan() || lq == f64::NEG_INFINITY {
            0.0
        } else {
            delta.exp().min(1.0)
        };
        Trajectory {
            theta: q,
            log_density: lq,
            grad: g,
            accept_prob,
            energy_change: if divergent { f64::NAN } else { delta },
            divergent,
        }
    }

    /// Halve or double `ε` from 1 until a single leapfrog step crosses 50%
    /// acceptance.
    fn initial_step<R: Rng + ?Sized>(&self, theta: &DVector<f64>, lp: f64, g: &DVector<f64>, rng: &mut R) -> f64 {
        let mut eps: f64 = 1.0;
        let p = self.momentum(rng);
        let a = self.leapfrog(theta, lp, g, p.clone(), eps, 1).accept_prob;
        let up = a > 0.5;
        for _ in 0..100 {
            let a = self.leapfrog(theta, lp, g, p.clone(), eps, 1).accept_prob;
            if (up && a <= 0.5) || (!up && a > 0.5) {
                break;
            }
            eps = if up { eps * 2.0 } else { eps / 2.0 };
        }
        eps
    }
}

/// Leapfrog HMC with a diagonal metric. The first half of warmup adapts the
/// step size under the identity metric while collecting marginal variances;
/// the second half adapts the step size again under the variance-rescaled
/// metric. Both are frozen for the kept draws.
pub fn hmc_sample(model: &dyn Posterior, cfg: &McmcConfig) -> Result<McmcOutput> {
    let mode = start_point(model)?;
    let d = model.dim();
    let nominal = cfg.hmc_leapfrog_steps as f64;
    let (lo, hi) = ((0.8 * nominal).round().max(1.0) as usize, (1.2 * nominal).round().max(1.0) as usize);
    run_chains(cfg, "mcmc/hmc", |_, rng| {
        let mut ham = Hamiltonian {
            model,
            inv_mass: DVector::from_element(d, 1.0),
        };
        let mut theta = mode.clone();
        let mut lp = model.log_density(theta.as_slice());
        let mut grad = log_posterior_gradient(model, theta.as_slice());
        let mut adapt = DualAveraging::new(ham.initial_step(&theta, lp, &grad, rng));
        let phase1 = cfg.n_warmup / 2;
        let mut stats = Welford::new(d);
        let mut eps = adapt.current();
        let mut draws = DMatrix::zeros(cfg.n_keep, d);
        let (mut accepts, mut energy, mut divergent) = (0usize, 0.0, 0usize);
        for it in 0..cfg.n_warmup + cfg.n_keep {
            let steps = rng.random_range(lo..=hi);
            let p = ham.momentum(rng);
            let tr = ham.leapfrog(&theta, lp, &grad, p, eps, steps);
            let u: f64 = rng.random();
            let accepted = u < tr.accept_prob;
            if accepted {
                theta = tr.theta;
                lp = tr.log_density;
                grad = tr.grad;
            }
            if it < cfg.n_warmup {
                adapt.update(tr.accept_prob);
                eps = adapt.current();
                if it < phase1 {
                    stats.push(&theta);
                }
                if it + 1 == phase1 && stats.n >= 10 {
                    let cov = stats.regularized_cov();
                    ham.inv_mass = DVector::from_fn(d, |j, _| cov[(j, j)]);
                    adapt = DualAveraging::new(ham.initial_step(&theta, lp, &grad, rng));
                    eps = adapt.current();
                }
                if it + 1 == cfg.n_warmup {
                    eps = adapt.final_step();
                }
            } else {
                accepts += accepted as usize;
                divergent += tr.divergent as usize;
                if tr.energy_change.is_finite() {
                    energy += tr.energy_change;
                }
                draws.row_mut(it - cfg.n_warmup).copy_from(&theta.transpose());
            }
        }
        Ok(ChainRun {
            draws,
            accept_rate: accepts as f64 / cfg.n_keep as f64,
            energy_change: energy / cfg.n_keep as f64,
            step_size: eps,
            divergent,
        })
    })
}

/// Split-R̂ and multi-chain autocorrelation ESS per coordinate.
///
/// Each chain is split in half. A coordinate with zero variance in every
/// half reports ESS equal to the total draw count and R̂ flagged undefined.
pub fn diagnostics(chains: &[DMatrix<f64>]) -> Result<ChainDiagnostics> {
    if chains.len() < 2 {
        return Err(Error::invalid("diagnostics need at least two chains"));
    }
    let n = chains[0].nrows();
    let d = chains[0].ncols();
    if n < 4 || chains.iter().any(|c| c.nrows() != n || c.ncols() != d) {
        return Err(Error::invalid("chains must share a shape with at least 4 draws"));
    }
    let half = n / 2;
    let total = (chains.len() * n) as f64;
    let mut r_hat = Vec::with_capacity(d);
    let mut undefined = Vec::with_capacity(d);
    let mut ess = Vec::with_capacity(d);
    for j in 0..d {
        let splits: Vec<Vec<f64>> = chains
            .iter()
            .flat_map(|c| {
                let col = c.column(j);
                [
                    col.rows(0, half).iter().copied().collect::<Vec<_>>(),
                    col.rows(n - half, half).iter().copied().collect(),
                ]
            })
            .collect();
        let (r, e) = split_stats(&splits);
        match r {
            Some(r) => {
                r_hat.push(r);
                undefined.push(false);
                ess.push(e.min(total));
            }
            None => {
                r_hat.push(1.0);
                undefined.push(true);
                ess.push(total);
            }
        }
    }
    Ok(ChainDiagnostics {
        r_hat,
        r_hat_undefined: undefined,
        ess,
        accept_rate: Vec::new(),
        mean_energy_change: Vec::new(),
        step_size: Vec::new(),
        divergent_transitions: 0,
        warnings: Vec::new(),
    })
}

/// `(R̂, ESS)` for equal-length sequences; `R̂` is `None` when every
/// sequence is constant at the same value.
fn split_stats(seqs: &[Vec<f64>]) -> (Option<f64>, f64) {
    let m = seqs.len() as f64;
    let n = seqs[0].len();
    let nf = n as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let vars: Vec<f64> = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m;
    if w == 0.0 {
        return if b == 0.0 { (None, m * nf) } else { (Some(f64::INFINITY), 1.0) };
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    let r = (var_plus / w).sqrt();

    // ρ_t = 1 - (W - mean autocovariance at lag t) / var⁺, summed in pairs
    // with Geyer's initial monotone sequence.
    let autocov = |t: usize| -> f64 {
        seqs.iter()
            .zip(&means)
            .map(|(s, mu)| (0..n - t).map(|i| (s[i] - mu) * (s[i + t] - mu)).sum::<f64>() / nf)
            .sum::<f64>()
            / m
    };
    let rho = |t: usize| 1.0 - (w - autocov(t)) / var_plus;
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / (m * nf).log10());
    (Some(r), m * nf / tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{Family, GlmModel};
    use crate::model::{FnModel, GaussianPrior};
    use crate::models::poisson_1d;
    use rand::Rng;

    fn gaussian_target(mean: Vec<f64>, sd: Vec<f64>) -> FnModel {
        let d = mean.len();
        let (m2, s2) = (mean.clone(), sd.clone());
        FnModel::new(
            d,
            |_| 0.0,
            move |t: &[f64]| {
                -0.5 * t
                    .iter()
                    .zip(&m2)
                    .zip(&s2)
                    .map(|((x, m), s)| ((x - m) / s).powi(2))
                    .sum::<f64>()
            },
        )
    }

    fn small_cfg(algorithm: Algorithm) -> McmcConfig {
        McmcConfig {
            n_chains: 4,
            n_warmup: 1000,
            n_keep: 4000,
            seed: 11,
            algorithm,
            hmc_leapfrog_steps: 16,
        }
    }

    fn column_mean_var(x: &DMatrix<f64>, j: usize) -> (f64, f64) {
        let n = x.nrows() as f64;
        let m = x.column(j).sum() / n;
        let v = x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    fn check_gaussian(out: &McmcOutput, mean: &[f64], sd: &[f64]) {
        let pooled = out.pooled();
        for j in 0..mean.len() {
            let (m, v) = column_mean_var(&pooled, j);
            let ess = out.diagnostics.ess[j];
            let se_mean = sd[j] / ess.sqrt();
            // variance of the sample variance for a Gaussian is 2σ⁴/ESS
            let se_var = (2.0f64).sqrt() * sd[j].powi(2) / ess.sqrt();
            assert!((m - mean[j]).abs() < 4.0 * se_mean, "coord {j}: mean {m} vs {}", mean[j]);
            assert!((v - sd[j].powi(2)).abs() < 4.0 * se_var, "coord {j}: var {v}");
        }
    }

    #[test]
    fn rwm_recovers_gaussian_moments() {
        let (mean, sd) = (vec![1.0, -2.0], vec![0.5, 3.0]);
        let out = rwm_sample(&gaussian_target(mean.clone(), sd.clone()), &small_cfg(Algorithm::Rwm)).unwrap();
        check_gaussian(&out, &mean, &sd);
        assert!(out.diagnostics.max_r_hat() < 1.01);
    }

    #[test]
    fn hmc_recovers_gaussian_moments_with_small_energy_error() {
        let (mean, sd) = (vec![1.0, -2.0, 0.0], vec![0.5, 3.0, 1.0]);
        let out = hmc_sample(&gaussian_target(mean.clone(), sd.clone()), &small_cfg(Algorithm::Hmc)).unwrap();
        check_gaussian(&out, &mean, &sd);
        let diag = &out.diagnostics;
        for (&a, &e) in diag.accept_rate.iter().zip(&diag.mean_energy_change) {
            assert!((0.6..=0.95).contains(&a), "acceptance {a}");
            // E[exp(ΔH)] = 1 puts E[ΔH] slightly below zero, near -Var(ΔH)/2
            assert!((-0.2..0.02).contains(&e), "mean energy change {e}");
        }
        assert_eq!(diag.divergent_transitions, 0);
        assert!(diag.max_r_hat() < 1.01);
    }

    #[test]
    fn chains_are_bitwise_reproducible() {
        let target = gaussian_target(vec![0.0], vec![1.0]);
        for alg in [Algorithm::Rwm, Algorithm::Hmc] {
            let cfg = McmcConfig { n_keep: 1000, n_warmup: 200, ..small_cfg(alg) };
            let a = sample(&target, &cfg).unwrap();
            let b = sample(&target, &cfg).unwrap();
            assert_eq!(a.chains, b.chains);
            let c = sample(&target, &McmcConfig { seed: 12, ..cfg }).unwrap();
            assert_ne!(a.chains, c.chains);
        }
    }

    /// Type-7 quantile of an unsorted sample.
    fn quantile(x: &mut [f64], p: f64) -> f64 {
        x.sort_by(f64::total_cmp);
        let h = (x.len() - 1) as f64 * p;
        let i = h.floor() as usize;
        x[i] + (h - i as f64) * (x[(i + 1).min(x.len() - 1)] - x[i])
    }

    #[test]
    fn rwm_matches_grid_quantiles_on_poisson() {
        let model = poisson_1d();
        let out = rwm_sample(&model, &small_cfg(Algorithm::Rwm)).unwrap();
        // grid CDF of the unnormalized posterior
        let (lo, hi, k) = (-3.0, 4.0, 200_001);
        let h = (hi - lo) / (k - 1) as f64;
        let dens: Vec<f64> = (0..k).map(|i| model.log_density(&[lo + i as f64 * h]).exp()).collect();
        let mut cdf = vec![0.0; k];
        for i in 1..k {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]);
        }
        let total = cdf[k - 1];
        let grid_q = |p: f64| {
            let i = cdf.partition_point(|&c| c < p * total);
            lo + i as f64 * h
        };
        let mut draws: Vec<f64> = out.pooled().column(0).iter().copied().collect();
        let ess = out.diagnostics.ess[0];
        for p in [0.25, 0.5, 0.75] {
            let q = grid_q(p);
            let dens_q = dens[((q - lo) / h).round() as usize] / total;
            let se = (p * (1.0 - p) / ess).sqrt() / dens_q;
            let emp = quantile(&mut draws, p);
            assert!((emp - q).abs() < 3.0 * se, "p={p}: {emp} vs {q} (se {se})");
        }
    }

    #[test]
    fn hmc_logistic_mean_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
        let y = DVector::from_fn(n, |i, _| {
            let p = 1.0 / (1.0 + (-(0.3f64 + 1.2 * x[(i, 1)])).exp());
            f64::from(rng.random::<f64>() < p)
        });
        let prior = GaussianPrior::isotropic(2, 0.0, 4.0).unwrap();
        let model = GlmModel::new(x, y, Family::BernoulliLogit, prior).unwrap();
        let out = hmc_sample(&model, &small_cfg(Algorithm::Hmc)).unwrap();

        let mode = start_point(&model).unwrap();
        let (k, half) = (401, 3.0);
        let h = 2.0 * half / (k - 1) as f64;
        let lmax = model.log_density(mode.as_slice());
        let (mut z, mut m1, mut m2) = (0.0, [0.0; 2], [0.0; 2]);
        for a in 0..k {
            for b in 0..k {
                let t = [mode[0] - half + a as f64 * h, mode[1] - half + b as f64 * h];
                let w = (model.log_density(&t) - lmax).exp();
                z += w;
                for j in 0..2 {
                    m1[j] += w * t[j];
                    m2[j] += w * t[j] * t[j];
                }
            }
        }
        let pooled = out.pooled();
        for j in 0..2 {
            let mean = m1[j] / z;
            let sd = (m2[j] / z - mean * mean).sqrt();
            let se = sd / out.diagnostics.ess[j].sqrt();
            let (emp, _) = column_mean_var(&pooled, j);
            assert!((emp - mean).abs() < 3.0 * se, "coord {j}: {emp} vs {mean} (se {se})");
        }
        assert!(out.diagnostics.max_r_hat() < 1.01);
    }

    fn iid_chains(seed: u64, m: usize, n: usize, offsets: &[f64]) -> Vec<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|c| DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal) + offsets[c]))
            .collect()
    }

    #[test]
    fn iid_chains_have_unit_r_hat_and_nominal_ess() {
        let diag = diagnostics(&iid_chains(3, 4, 5000, &[0.0; 4])).unwrap();
        assert!((0.999..=1.005).contains(&diag.r_hat[0]), "{}", diag.r_hat[0]);
        assert!((diag.ess[0] / 20_000.0 - 1.0).abs() < 0.1, "{}", diag.ess[0]);
    }

    #[test]
    fn offset_copies_inflate_r_hat() {
        let base = iid_chains(4, 1, 2000, &[0.0]).remove(0);
        let chains: Vec<_> = (0..4).map(|c| base.add_scalar(3.0 * c as f64)).collect();
        assert!(diagnostics(&chains).unwrap().r_hat[0] > 1.1);
    }

    #[test]
    fn constant_chains_follow_the_degenerate_convention() {
        let chains = vec![DMatrix::from_element(100, 2, 1.5); 3];
        let diag = diagnostics(&chains).unwrap();
        assert_eq!(diag.ess, vec![300.0, 300.0]);
        assert_eq!(diag.r_hat_undefined, vec![true, true]);
        assert!(diag.r_hat.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn autocorrelated_chain_has_reduced_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi: f64 = 0.9;
        let chains: Vec<_> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                DMatrix::from_fn(20_000, 1, |_, _| {
                    x = phi * x + (1.0 - phi * phi).sqrt() * rng.sample::<f64, _>(StandardNormal);
                    x
                })
            })
            .collect();
        // AR(1): ESS/N = (1 - φ)/(1 + φ)
        let expect = 80_000.0 * (1.0 - phi) / (1.0 + phi);
        let ess = diagnostics(&chains).unwrap().ess[0];
        assert!((ess / expect - 1.0).abs() < 0.15, "{ess} vs {expect}");
    }

    #[test]
    fn config_validation() {
        assert!(McmcConfig::default().validate().is_ok());
        assert!(McmcConfig { n_chains: 1, ..Default::default() }.validate().is_err());
        assert!(McmcConfig { n_keep: 999, ..Default::default() }.validate().is_err());
    }
}
