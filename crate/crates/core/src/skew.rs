//! The skewness-inducing factor
//! `w*(θ) = π_n(θ) / (π_n(θ) + π_n(2θ̂ - θ))`, the skew-symmetric
//! approximation `q*(θ) = 2 f*(θ) w*(θ)` and its reflection sampler.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::approx::SymmetricApproximation;
use crate::error::{Error, Result};
use crate::glm::GlmModel;
use crate::math::{logistic, LN_2};
use crate::model::Posterior;
use crate::seed::derive_index;

/// `2θ̂ - θ`.
pub fn mirror(theta: &[f64], center: &[f64]) -> DVector<f64> {
    assert_eq!(theta.len(), center.len(), "mirror: dimension mismatch");
    DVector::from_iterator(
        theta.len(),
        theta.iter().zip(center).map(|(t, c)| 2.0 * c - t),
    )
}

/// `w*` from the two unnormalized log densities `log π_n(θ)` and
/// `log π_n(2θ̂ - θ)`.
///
/// Both off the support gives 0.5; one side off the support gives 0 or 1.
pub fn factor_from_log_pair(log_at: f64, log_mirror: f64) -> f64 {
    match (log_at == f64::NEG_INFINITY, log_mirror == f64::NEG_INFINITY) {
        (true, true) => 0.5,
        (false, true) => 1.0,
        (true, false) => 0.0,
        (false, false) => logistic(log_at - log_mirror),
    }
}

fn fingerprint(v: &[f64]) -> u64 {
    v.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, x| {
        (h ^ x.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone)]
struct PredictorCache {
    model: Arc<GlmModel>,
    eta_center: DVector<f64>,
    center_fingerprint: u64,
}

/// `w*_{θ̂}` for a given model and symmetry point.
///
/// When built with [`SkewnessFactor::for_glm`] the linear predictor at the
/// center is computed once, so each evaluation costs one product `X(θ - θ̂)`
/// instead of two full likelihood evaluations.
#[derive(Clone)]
pub struct SkewnessFactor {
    model: Arc<dyn Posterior>,
    center: DVector<f64>,
    linear: Option<PredictorCache>,
}

impl std::fmt::Debug for SkewnessFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SkewnessFactor")
            .field("center", &self.center.as_slice())
            .field("fast_path", &self.linear.is_some())
            .finish()
    }
}

impl SkewnessFactor {
    pub fn new(model: Arc<dyn Posterior>, center: DVector<f64>) -> Result<Self> {
        if center.len() != model.dim() {
            return Err(Error::invalid("center has the wrong dimension"));
        }
        Ok(Self {
            model,
            center,
            linear: None,
        })
    }

    pub fn for_glm(model: Arc<GlmModel>, center: DVector<f64>) -> Result<Self> {
        let mut f = Self::new(model.clone(), center)?;
        f.linear = Some(PredictorCache {
            eta_center: model.linear_predictor(f.center.as_slice()),
            center_fingerprint: fingerprint(f.center.as_slice()),
            model,
        });
        Ok(f)
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn model(&self) -> &Arc<dyn Posterior> {
        &self.model
    }

    pub fn has_fast_path(&self) -> bool {
        self.linear.is_some()
    }

    /// Linear predictor at the center, when precomputed.
    pub fn eta_center(&self) -> Option<&DVector<f64>> {
        self.linear.as_ref().map(|c| &c.eta_center)
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.center.len() {
            return Err(Error::invalid(format!(
                "parameter has dimension {}, factor expects {}",
                theta.len(),
                self.center.len()
            )));
        }
        Ok(())
    }

    /// `w*(θ)` from two direct posterior evaluations.
    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        let a = self.model.log_density(theta);
        let b = self.model.log_density(mirror(theta, self.center.as_slice()).as_slice());
        if a.is_nan() || b.is_nan() {
            return Err(Error::Evaluation { at: theta.to_vec() });
        }
        Ok(factor_from_log_pair(a, b))
    }

    /// `w*(θ)` through the linear-predictor shortcut:
    /// `ℓ(θ) - ℓ(2θ̂ - θ) = Σ_i g_i(η̂_i + δ_i) - g_i(η̂_i - δ_i)` with
    /// `δ = X(θ - θ̂)`; the prior difference is evaluated directly.
    pub fn value_fast(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        let cache = self
            .linear
            .as_ref()
            .ok_or_else(|| Error::State("no linear-predictor precomputation".to_string()))?;
        if cache.center_fingerprint != fingerprint(self.center.as_slice()) {
            return Err(Error::State("linear-predictor cache is stale".to_string()));
        }
        let model = &cache.model;
        let offset = DVector::from_iterator(
            theta.len(),
            theta.iter().zip(self.center.iter()).map(|(t, c)| t - c),
        );
        let delta = model.design() * offset;
        let mirrored = mirror(theta, self.center.as_slice());
        let mut log_diff = model.log_prior(theta) - model.log_prior(mirrored.as_slice());
        for (i, (e, dl)) in cache.eta_center.iter().zip(delta.iter()).enumerate() {
            log_diff += model.obs_log_lik(i, e + dl) - model.obs_log_lik(i, e - dl);
        }
        if log_diff.is_nan() {
            return Err(Error::Evaluation { at: theta.to_vec() });
        }
        Ok(logistic(log_diff))
    }

    /// Fast path when available, direct evaluation otherwise.
    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        if self.linear.is_some() {
            self.value_fast(theta)
        } else {
            self.value(theta)
        }
    }
}

/// One draw of the reflection sampler with its internals exposed.
#[derive(Debug, Clone)]
pub struct SkewDraw {
    /// The draw from the symmetric component.
    pub proposal: DVector<f64>,
    /// `w*(proposal)`.
    pub weight: f64,
    pub uniform: f64,
    /// Whether the proposal was reflected through the center.
    pub flipped: bool,
    pub value: DVector<f64>,
}

/// `q*(θ) = 2 f*(θ) w*(θ)`.
#[derive(Debug, Clone)]
pub struct SkewSymmetricApproximation {
    symmetric: SymmetricApproximation,
    factor: SkewnessFactor,
}

/// Draws per independently seeded block in [`SkewSymmetricApproximation::sample_seeded`].
const SAMPLE_BLOCK: usize = 1024;

impl SkewSymmetricApproximation {
    pub fn new(symmetric: SymmetricApproximation, factor: SkewnessFactor) -> Result<Self> {
        if symmetric.center() != factor.center() {
            return Err(Error::invalid(
                "skewness factor must share the symmetric approximation's center",
            ));
        }
        Ok(Self { symmetric, factor })
    }

    /// Perturbs `symmetric` using direct posterior evaluations.
    pub fn from_model(symmetric: SymmetricApproximation, model: Arc<dyn Posterior>) -> Result<Self> {
        let factor = SkewnessFactor::new(model, symmetric.center().clone())?;
        Self::new(symmetric, factor)
    }

    /// Perturbs `symmetric` using the GLM linear-predictor shortcut.
    pub fn from_glm(symmetric: SymmetricApproximation, model: Arc<GlmModel>) -> Result<Self> {
        let factor = SkewnessFactor::for_glm(model, symmetric.center().clone())?;
        Self::new(symmetric, factor)
    }

    pub fn symmetric(&self) -> &SymmetricApproximation {
        &self.symmetric
    }

    pub fn factor(&self) -> &SkewnessFactor {
        &self.factor
    }

    pub fn center(&self) -> &DVector<f64> {
        self.factor.center()
    }

    pub fn dim(&self) -> usize {
        self.center().len()
    }

    /// `log 2 + log f*(θ) + log w*(θ)`; `-inf` where either factor vanishes.
    pub fn log_pdf(&self, theta: &[f64]) -> Result<f64> {
        let w = self.factor.eval(theta)?;
        let lf = self.symmetric.log_pdf(theta);
        if w == 0.0 || lf == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(LN_2 + lf + w.ln())
    }

    /// One reflection-sampler step: draw from `f*`, keep it with
    /// probability `w*`, otherwise return its mirror image.
    pub fn draw_traced<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SkewDraw> {
        let proposal = self.symmetric.draw(rng);
        let uniform: f64 = rng.random();
        let weight = self.factor.eval(proposal.as_slice())?;
        let flipped = uniform > weight;
        let value = if flipped {
            mirror(proposal.as_slice(), self.center().as_slice())
        } else {
            proposal.clone()
        };
        Ok(SkewDraw {
            proposal,
            weight,
            uniform,
            flipped,
            value,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        Ok(self.draw_traced(rng)?.value)
    }

    /// `n` draws from one RNG stream, one row per draw.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(n, self.dim());
        for i in 0..n {
            out.set_row(i, &self.draw(rng)?.transpose());
        }
        Ok(out)
    }

    /// `n` draws in parallel blocks, each block seeded from `(seed, block)`;
    /// the result does not depend on the number of worker threads.
    pub fn sample_seeded(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        let blocks: Vec<(usize, usize)> = (0..n)
            .step_by(SAMPLE_BLOCK)
            .map(|start| (start, SAMPLE_BLOCK.min(n - start)))
            .collect();
        let parts: Vec<DMatrix<f64>> = blocks
            .par_iter()
            .enumerate()
            .map(|(b, &(_, len))| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_index(seed, b as u64));
                self.sample(len, &mut rng)
            })
            .collect::<Result<_>>()?;
        let mut out = DMatrix::zeros(n, self.dim());
        for ((start, len), part) in blocks.iter().zip(parts) {
            out.view_mut((*start, 0), (*len, self.dim())).copy_from(&part);
        }
        Ok(out)
    }
}

/// Draws from a symmetric approximation in seeded parallel blocks.
pub fn sample_symmetric_seeded(approx: &SymmetricApproximation, n: usize, seed: u64) -> DMatrix<f64> {
    let d = approx.dim();
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(SAMPLE_BLOCK)
        .map(|start| (start, SAMPLE_BLOCK.min(n - start)))
        .collect();
    let parts: Vec<DMatrix<f64>> = blocks
        .par_iter()
        .enumerate()
        .map(|(b, &(_, len))| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_index(seed, b as u64));
            let mut m = DMatrix::zeros(len, d);
            for i in 0..len {
                m.set_row(i, &approx.draw(&mut rng).transpose());
            }
            m
        })
        .collect();
    let mut out = DMatrix::zeros(n, d);
    for ((start, len), part) in blocks.iter().zip(parts) {
        out.view_mut((*start, 0), (*len, d)).copy_from(&part);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{fit_laplace, GaussianApproximation, LaplaceOptions};
    use crate::glm::Family;
    use crate::model::GaussianPrior;
    use proptest::prelude::*;
    use rand::Rng;

    fn poisson_1d() -> Arc<GlmModel> {
        Arc::new(
            GlmModel::new(
                DMatrix::from_element(1, 1, 1.0),
                DVector::from_element(1, 3.0),
                Family::PoissonLog,
                GaussianPrior::isotropic(1, 0.0, 4.0).unwrap(),
            )
            .unwrap(),
        )
    }

    fn conjugate() -> Arc<GlmModel> {
        Arc::new(
            GlmModel::new(
                DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 1.0, -1.0]),
                DVector::from_vec(vec![0.4, -0.3]),
                Family::GaussianIdentity,
                GaussianPrior::isotropic(2, 0.0, 1.0).unwrap(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn mirror_examples() {
        assert_eq!(mirror(&[1.0, 0.0], &[1.0, 0.0]).as_slice(), &[1.0, 0.0]);
        assert_eq!(mirror(&[0.0, 0.0], &[1.0, 0.0]).as_slice(), &[2.0, 0.0]);
        let t = [0.3, -7.25];
        let c = [1.5, 2.0];
        let back = mirror(mirror(&t, &c).as_slice(), &c);
        assert!(back.iter().zip(t).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn factor_is_half_at_center_and_on_symmetric_posteriors() {
        let m = poisson_1d();
        let la = fit_laplace(m.as_ref(), &[0.0], &LaplaceOptions::default()).unwrap();
        let f = SkewnessFactor::for_glm(m, la.center().clone()).unwrap();
        assert_eq!(f.value(la.center().as_slice()).unwrap(), 0.5);
        assert_eq!(f.value_fast(la.center().as_slice()).unwrap(), 0.5);

        let g = conjugate();
        let la = fit_laplace(g.as_ref(), &[0.0, 0.0], &LaplaceOptions::default()).unwrap();
        let f = SkewnessFactor::for_glm(g, la.center().clone()).unwrap();
        for t in [[0.0, 0.0], [3.0, -1.0], [-2.0, 5.0]] {
            assert!((f.value(&t).unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_factor_matches_two_evaluation_oracle() {
        let m = poisson_1d();
        let la = fit_laplace(m.as_ref(), &[0.0], &LaplaceOptions::default()).unwrap();
        let c = la.center()[0];
        let t = c + 1.0;
        let delta = m.log_density(&[t]) - m.log_density(&[2.0 * c - t]);
        let oracle = 1.0 / (1.0 + (-delta).exp());
        let f = SkewnessFactor::new(m.clone(), la.center().clone()).unwrap();
        assert!((f.value(&[t]).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn extreme_log_ratios_saturate_without_nan() {
        assert_eq!(factor_from_log_pair(0.0, -800.0), 1.0);
        assert_eq!(factor_from_log_pair(-800.0, 0.0), 0.0);
        assert_eq!(factor_from_log_pair(f64::NEG_INFINITY, f64::NEG_INFINITY), 0.5);
        assert_eq!(factor_from_log_pair(f64::NEG_INFINITY, 2.0), 0.0);
        assert_eq!(factor_from_log_pair(-3.0, f64::NEG_INFINITY), 1.0);
    }

    #[test]
    fn missing_precomputation_is_a_state_error() {
        let m = poisson_1d();
        let f = SkewnessFactor::new(m, DVector::from_element(1, 0.5)).unwrap();
        assert!(matches!(f.value_fast(&[0.1]), Err(Error::State(_))));
        assert!(f.value(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn skew_log_pdf_at_center_and_pair_sum() {
        let m = poisson_1d();
        let la = fit_laplace(m.as_ref(), &[0.0], &LaplaceOptions::default()).unwrap();
        let q = SkewSymmetricApproximation::from_glm(la.clone(), m).unwrap();
        let c = la.center().as_slice().to_vec();
        assert_eq!(q.log_pdf(&c).unwrap(), la.log_pdf(&c));
        for k in 0..50 {
            let t = [c[0] - 1.0 + k as f64 * 0.04];
            let back = mirror(&t, &c);
            let pair = q.log_pdf(&t).unwrap().exp() + q.log_pdf(back.as_slice()).unwrap().exp();
            assert!((pair - 2.0 * la.log_pdf(&t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn skew_density_integrates_to_one() {
        let m = poisson_1d();
        let la = fit_laplace(m.as_ref(), &[0.0], &LaplaceOptions::default()).unwrap();
        let sd = la.gaussian().covariance()[(0, 0)].sqrt();
        let q = SkewSymmetricApproximation::from_glm(la.clone(), m).unwrap();
        let c = la.center()[0];
        let n = 10_000;
        let (lo, hi) = (c - 12.0 * sd, c + 12.0 * sd);
        let h = (hi - lo) / (n - 1) as f64;
        let mass: f64 = (0..n)
            .map(|k| {
                let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                w * q.log_pdf(&[lo + k as f64 * h]).unwrap().exp()
            })
            .sum::<f64>()
            * h;
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }

    #[test]
    fn every_draw_is_the_proposal_or_its_mirror() {
        let m = poisson_1d();
        let la = fit_laplace(m.as_ref(), &[0.0], &LaplaceOptions::default()).unwrap();
        let q = SkewSymmetricApproximation::from_glm(la, m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let d = q.draw_traced(&mut rng).unwrap();
            let back = mirror(d.proposal.as_slice(), q.center().as_slice());
            assert!(d.value == d.proposal || d.value == back);
            assert_eq!(d.flipped, d.uniform > d.weight);
        }
    }

    #[test]
    fn symmetric_posterior_sampler_keeps_center() {
        let g = conjugate();
        let la = fit_laplace(g.as_ref(), &[0.0, 0.0], &LaplaceOptions::default()).unwrap();
        let q = SkewSymmetricApproximation::from_glm(la.clone(), g).unwrap();
        let n = 1_000_000;
        let s = q.sample_seeded(n, 3).unwrap();
        let cov = la.gaussian().covariance();
        for j in 0..2 {
            let mean = s.column(j).mean();
            let se = (cov[(j, j)] / n as f64).sqrt();
            assert!((mean - la.center()[j]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let m = poisson_1d();
        let la = fit_laplace(m.as_ref(), &[0.0], &LaplaceOptions::default()).unwrap();
        let q = SkewSymmetricApproximation::from_glm(la, m).unwrap();
        assert_eq!(q.sample_seeded(5000, 1).unwrap(), q.sample_seeded(5000, 1).unwrap());
        assert_ne!(q.sample_seeded(5000, 1).unwrap(), q.sample_seeded(5000, 2).unwrap());
    }

    #[test]
    fn mismatched_centers_are_rejected() {
        let m = poisson_1d();
        let g = GaussianApproximation::from_factor(DVector::from_element(1, 0.0), DMatrix::identity(1, 1)).unwrap();
        let f = SkewnessFactor::new(m, DVector::from_element(1, 1.0)).unwrap();
        assert!(SkewSymmetricApproximation::new(SymmetricApproximation::Laplace(g), f).is_err());
    }

    proptest! {
        #[test]
        fn factor_and_mirror_sum_to_one(t0 in -4.0f64..4.0, t1 in -4.0f64..4.0, c0 in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let x = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_fn(30, |_, _| f64::from(rng.random_bool(0.4) as u8));
            let m = Arc::new(GlmModel::new(x, y, Family::BernoulliLogit, GaussianPrior::isotropic(2, 0.0, 4.0).unwrap()).unwrap());
            let f = SkewnessFactor::for_glm(m, DVector::from_vec(vec![c0, 0.2])).unwrap();
            let t = [t0, t1];
            let w = f.value(&t).unwrap();
            let wm = f.value(mirror(&t, f.center().as_slice()).as_slice()).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
            prop_assert!((w + wm - 1.0).abs() < 1e-12);
            prop_assert!((f.value_fast(&t).unwrap() - w).abs() < 1e-12);
        }
    }
}
