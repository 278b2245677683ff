//! Semi-nonparametric fourth-order extension of the Laplace Gaussian:
//! `φ(θ; θ̃, J⁻¹) · P(θ - θ̃) / E[P]` with
//! `P(h) = 1 + a + a²/2 + b²/2`, `a = ⟨ℓ⁽⁴⁾, h⊗⁴⟩/24`, `b = ⟨ℓ⁽³⁾, h⊗³⟩/6`.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GaussianApproximation, SymmetricApproximation};
use crate::error::{Error, Result};
use crate::model::Posterior;
use crate::tensor::DerivTensor;

const GRID_POINTS_1D: usize = 4096;
const GRID_HALF_WIDTH_SD: f64 = 10.0;
const PROPOSAL_INFLATION: f64 = 1.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnpApproximation {
    kernel: GaussianApproximation,
    precision: DMatrix<f64>,
    l3: DerivTensor,
    l4: DerivTensor,
    poly_normalizer: f64,
    #[serde(skip)]
    sampler: OnceLock<Sampler>,
}

#[derive(Debug, Clone)]
enum Sampler {
    /// Inverse CDF by linear interpolation of a trapezoid CDF table.
    Grid { xs: Vec<f64>, cdf: Vec<f64> },
    /// Rejection from `N(θ̃, c² J⁻¹)` with envelope constant `bound`.
    Rejection { bound: f64 },
}

impl SnpApproximation {
    pub fn new(kernel: GaussianApproximation, l3: DerivTensor, l4: DerivTensor) -> Result<Self> {
        let d = kernel.dim();
        if d > 2 {
            return Err(Error::Unsupported(format!(
                "SNP approximation is limited to d ≤ 2 (got d = {d})"
            )));
        }
        if l3.dim() != d || l4.dim() != d || l3.order() != 3 || l4.order() != 4 {
            return Err(Error::invalid("derivative tensors do not match the kernel"));
        }
        let cov = kernel.covariance();
        let precision = cov.clone().try_inverse().ok_or_else(|| Error::IndefiniteCurvature {
            at: kernel.mean().as_slice().to_vec(),
        })?;
        let poly_normalizer = poly_expectation(&l3, &l4, &cov);
        Ok(Self {
            kernel,
            precision,
            l3,
            l4,
            poly_normalizer,
            sampler: OnceLock::new(),
        })
    }

    pub fn mode(&self) -> &DVector<f64> {
        self.kernel.mean()
    }

    pub fn kernel(&self) -> &GaussianApproximation {
        &self.kernel
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn l3(&self) -> &DerivTensor {
        &self.l3
    }

    pub fn l4(&self) -> &DerivTensor {
        &self.l4
    }

    /// `E[P(θ - θ̃)]` under the Laplace kernel.
    pub fn poly_normalizer(&self) -> f64 {
        self.poly_normalizer
    }

    /// `P(h)`.
    pub fn poly(&self, h: &[f64]) -> f64 {
        let a = self.l4.contract_power(h) / 24.0;
        let b = self.l3.contract_power(h) / 6.0;
        1.0 + a + 0.5 * a * a + 0.5 * b * b
    }

    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        let h: Vec<f64> = theta.iter().zip(self.mode().iter()).map(|(t, m)| t - m).collect();
        self.kernel.log_pdf(theta) + self.poly(&h).ln() - self.poly_normalizer.ln()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self.sampler.get_or_init(|| self.build_sampler()) {
            Sampler::Grid { xs, cdf } => {
                let u: f64 = rng.random();
                let k = cdf.partition_point(|&c| c < u).clamp(1, cdf.len() - 1);
                let (c0, c1) = (cdf[k - 1], cdf[k]);
                let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
                DVector::from_element(1, xs[k - 1] + frac * (xs[k] - xs[k - 1]))
            }
            Sampler::Rejection { bound } => {
                let lower = self.kernel.cov_factor();
                let c = PROPOSAL_INFLATION;
                loop {
                    let z = DVector::from_fn(self.mode().len(), |_, _| {
                        rng.sample::<f64, _>(StandardNormal)
                    });
                    let h = lower * &z * c;
                    let ratio = self.envelope_ratio(&z, h.as_slice());
                    let u: f64 = rng.random();
                    if u * bound <= ratio {
                        return self.mode() + h;
                    }
                }
            }
        }
    }

    /// Target over proposal density ratio at whitened proposal point `z`.
    fn envelope_ratio(&self, z: &DVector<f64>, h: &[f64]) -> f64 {
        let c = PROPOSAL_INFLATION;
        let d = z.len() as f64;
        c.powf(d) * (-0.5 * (c * c - 1.0) * z.norm_squared()).exp() * self.poly(h)
            / self.poly_normalizer
    }

    fn build_sampler(&self) -> Sampler {
        let lower = self.kernel.cov_factor();
        if self.mode().len() == 1 {
            let sd = lower[(0, 0)];
            let m = self.mode()[0];
            let (lo, hi) = (m - GRID_HALF_WIDTH_SD * sd, m + GRID_HALF_WIDTH_SD * sd);
            let step = (hi - lo) / (GRID_POINTS_1D - 1) as f64;
            let xs: Vec<f64> = (0..GRID_POINTS_1D).map(|k| lo + k as f64 * step).collect();
            let pdf: Vec<f64> = xs.iter().map(|&x| self.log_pdf(&[x]).exp()).collect();
            let mut cdf = vec![0.0; GRID_POINTS_1D];
            for k in 1..GRID_POINTS_1D {
                cdf[k] = cdf[k - 1] + 0.5 * step * (pdf[k] + pdf[k - 1]);
            }
            let total = cdf[GRID_POINTS_1D - 1];
            cdf.iter_mut().for_each(|c| *c /= total);
            Sampler::Grid { xs, cdf }
        } else {
            let c = PROPOSAL_INFLATION;
            let mut bound: f64 = 0.0;
            let angles = 720;
            for a in 0..angles {
                let ang = std::f64::consts::TAU * a as f64 / angles as f64;
                for r in 0..=2000 {
                    let r = r as f64 * 0.005;
                    let z = DVector::from_vec(vec![r * ang.cos(), r * ang.sin()]);
                    let h = lower * &z * c;
                    bound = bound.max(self.envelope_ratio(&z, h.as_slice()));
                }
            }
            Sampler::Rejection {
                bound: bound * 1.02,
            }
        }
    }
}

/// `E[h^α]` for `h ~ N(0, cov)`, `α` a multi-index of exponents, by the
/// Gaussian integration-by-parts recursion
/// `E[h_i f(h)] = Σ_j cov_ij E[∂_j f(h)]`.
pub fn gaussian_monomial_moment(cov: &DMatrix<f64>, exps: &[u32]) -> f64 {
    let mut memo = HashMap::new();
    moment_rec(cov, exps.to_vec(), &mut memo)
}

fn moment_rec(cov: &DMatrix<f64>, exps: Vec<u32>, memo: &mut HashMap<Vec<u32>, f64>) -> f64 {
    let total: u32 = exps.iter().sum();
    if total == 0 {
        return 1.0;
    }
    if total % 2 == 1 {
        return 0.0;
    }
    if let Some(&v) = memo.get(&exps) {
        return v;
    }
    let i = exps.iter().position(|&e| e > 0).expect("nonzero total");
    let mut beta = exps.clone();
    beta[i] -= 1;
    let mut acc = 0.0;
    for j in 0..beta.len() {
        if beta[j] == 0 || cov[(i, j)] == 0.0 {
            continue;
        }
        let mut gamma = beta.clone();
        gamma[j] -= 1;
        acc += cov[(i, j)] * beta[j] as f64 * moment_rec(cov, gamma, memo);
    }
    memo.insert(exps, acc);
    acc
}

type Poly = HashMap<Vec<u32>, f64>;

fn tensor_poly(t: &DerivTensor, scale: f64) -> Poly {
    let d = t.dim();
    let mut poly = Poly::new();
    for (flat, &v) in t.as_slice().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let mut exps = vec![0u32; d];
        let mut rem = flat;
        for _ in 0..t.order() {
            exps[rem % d] += 1;
            rem /= d;
        }
        *poly.entry(exps).or_insert(0.0) += v * scale;
    }
    poly
}

fn poly_square(p: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ea, ca) in p {
        for (eb, cb) in p {
            let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            *out.entry(e).or_insert(0.0) += ca * cb;
        }
    }
    out
}

fn poly_expectation(l3: &DerivTensor, l4: &DerivTensor, cov: &DMatrix<f64>) -> f64 {
    let a = tensor_poly(l4, 1.0 / 24.0);
    let b = tensor_poly(l3, 1.0 / 6.0);
    let mut memo = HashMap::new();
    let mut expect = |p: &Poly| -> f64 {
        p.iter()
            .map(|(e, c)| c * moment_rec(cov, e.clone(), &mut memo))
            .sum()
    };
    1.0 + expect(&a) + 0.5 * expect(&poly_square(&a)) + 0.5 * expect(&poly_square(&b))
}

/// SNP density built on a fitted Laplace approximation, using the
/// model's analytic third and fourth log-likelihood derivatives at the mode.
pub fn build_snp(
    model: &dyn Posterior,
    laplace: &SymmetricApproximation,
) -> Result<SymmetricApproximation> {
    let kernel = match laplace {
        SymmetricApproximation::Laplace(g) => g.clone(),
        other => {
            return Err(Error::invalid(format!(
                "SNP is built on a Laplace approximation, got {}",
                other.kind().name()
            )))
        }
    };
    if model.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "SNP approximation is limited to d ≤ 2 (got d = {})",
            model.dim()
        )));
    }
    let mode = kernel.mean().as_slice().to_vec();
    let missing = || Error::Unsupported("model has no analytic third/fourth derivatives".into());
    let l3 = model.log_lik_derivative(&mode, 3).ok_or_else(missing)?;
    let l4 = model.log_lik_derivative(&mode, 4).ok_or_else(missing)?;
    Ok(SymmetricApproximation::Snp(SnpApproximation::new(kernel, l3, l4)?))
}
