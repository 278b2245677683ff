//! Divergences between densities on `d ≤ 2` by trapezoid quadrature, and a
//! Monte Carlo total-variation estimator for higher dimensions.
//!
//! Quadrature estimates carry an error estimate equal to the change in value
//! when the grid resolution is halved.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::SymmetricApproximation;
use crate::error::{Error, Result};
use crate::math::{log_add_exp, LN_2};
use crate::skew::mirror;

/// Allowed departure of a density's grid mass from one.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Absolute floor on quadrature error estimates (roundoff level).
const ERR_FLOOR: f64 = 1e-13;

const SUPPORT_EPS: f64 = 1e-300;

/// Tensor-product grid on the box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(rename = "points")]
    pub points_per_dim: usize,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points_per_dim: usize) -> Result<Self> {
        if lo.is_empty() || lo.len() > 2 || lo.len() != hi.len() {
            return Err(Error::invalid("grids are supported in one or two dimensions"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::invalid("grid bounds must be finite with lo < hi"));
        }
        if points_per_dim < 64 {
            return Err(Error::invalid("a grid needs at least 64 points per dimension"));
        }
        Ok(Self { lo, hi, points_per_dim })
    }

    /// Box `center ± half_width` with the default resolution for its
    /// dimension (4096 points in 1D, 512 in 2D).
    pub fn centered(center: &[f64], half_width: &[f64]) -> Result<Self> {
        let points = if center.len() == 1 { 4096 } else { 512 };
        Self::new(
            center.iter().zip(half_width).map(|(c, h)| c - h).collect(),
            center.iter().zip(half_width).map(|(c, h)| c + h).collect(),
            points,
        )
    }

    /// Default domain for an approximation: `center ± 12` standard
    /// deviations of its Gaussian component.
    pub fn for_approximation(approx: &SymmetricApproximation) -> Result<Self> {
        let cov = approx.gaussian().covariance();
        let half: Vec<f64> = (0..approx.dim()).map(|j| 12.0 * cov[(j, j)].sqrt()).collect();
        Self::centered(approx.center().as_slice(), &half)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.points_per_dim.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether the grid is invariant under reflection through `center`.
    pub fn is_symmetric_about(&self, center: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(center)
            .all(|((l, h), c)| ((l + h) * 0.5 - c).abs() <= 1e-12 * (1.0 + (h - l).abs()))
    }

    fn step(&self, j: usize) -> f64 {
        (self.hi[j] - self.lo[j]) / (self.points_per_dim - 1) as f64
    }

    fn axis(&self, j: usize) -> Vec<f64> {
        let n = self.points_per_dim;
        let h = self.step(j);
        (0..n)
            .map(|k| if k == n - 1 { self.hi[j] } else { self.lo[j] + k as f64 * h })
            .collect()
    }

    /// Grid nodes in row-major order (last coordinate fastest).
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|j| self.axis(j)).collect();
        match self.dim() {
            1 => axes[0].iter().map(|&x| vec![x]).collect(),
            _ => axes[0]
                .iter()
                .flat_map(|&x| axes[1].iter().map(move |&y| vec![x, y]))
                .collect(),
        }
    }

    /// Trapezoid weights including the cell volume, aligned with [`nodes`](Self::nodes).
    pub fn weights(&self) -> Vec<f64> {
        let n = self.points_per_dim;
        let w1 = |j: usize| -> Vec<f64> {
            let h = self.step(j);
            (0..n).map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h }).collect()
        };
        match self.dim() {
            1 => w1(0),
            _ => {
                let (a, b) = (w1(0), w1(1));
                a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
            }
        }
    }

    /// Same box at half the resolution; used for error estimates.
    pub fn coarsened(&self) -> Self {
        Self {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            points_per_dim: (self.points_per_dim / 2).max(8),
        }
    }

    pub fn refined(&self) -> Self {
        Self {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            points_per_dim: self.points_per_dim * 2,
        }
    }

    /// Evaluates `f` at every node, in parallel.
    pub fn evaluate(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Vec<f64> {
        self.nodes().par_iter().map(|x| f(x)).collect()
    }
}

/// A log density tabulated on a grid and on its half-resolution companion.
#[derive(Debug, Clone)]
pub struct GridValues {
    pub grid: GridSpec,
    pub fine: Vec<f64>,
    pub coarse: Vec<f64>,
}

impl GridValues {
    pub fn new(grid: &GridSpec, log_f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<Self> {
        let fine = grid.evaluate(log_f);
        let coarse = grid.coarsened().evaluate(log_f);
        if fine.iter().chain(&coarse).any(|v| v.is_nan()) {
            let at = grid
                .nodes()
                .into_iter()
                .zip(&fine)
                .find(|(_, v)| v.is_nan())
                .map(|(x, _)| x)
                .unwrap_or_default();
            return Err(Error::Evaluation { at });
        }
        Ok(Self {
            grid: grid.clone(),
            fine,
            coarse,
        })
    }

    /// Applies `op` pointwise to both resolutions.
    pub fn map(&self, op: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            fine: self.fine.iter().map(|&v| op(v)).collect(),
            coarse: self.coarse.iter().map(|&v| op(v)).collect(),
        }
    }

    /// Combines two tabulations on the same grid pointwise.
    pub fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::invalid("tabulations live on different grids"));
        }
        Ok(Self {
            grid: self.grid.clone(),
            fine: self.fine.iter().zip(&other.fine).map(|(&a, &b)| op(a, b)).collect(),
            coarse: self.coarse.iter().zip(&other.coarse).map(|(&a, &b)| op(a, b)).collect(),
        })
    }

    /// `log ∫ exp(log_f)` on the fine grid.
    pub fn log_mass(&self) -> f64 {
        log_integral(&self.fine, &self.grid.weights())
    }

    /// Shifts the log density so that it integrates to one on the fine grid.
    pub fn normalized(&self) -> Self {
        let z = self.log_mass();
        self.map(|v| v - z)
    }
}

fn log_integral(log_f: &[f64], w: &[f64]) -> f64 {
    let top = log_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = log_f.iter().zip(w).map(|(v, w)| w * (v - top).exp()).sum();
    top + s.ln()
}

/// Which divergence `D[p ‖ q]` to compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DivergenceKind {
    Tv,
    Alpha { alpha: f64 },
    /// `∫ p log(p/q)`.
    KlForward,
    /// `∫ q log(q/p)`.
    KlReverse,
}

impl DivergenceKind {
    /// TV, `α ∈ {-1, 0.5, 2}` and both KL directions.
    pub fn battery() -> Vec<DivergenceKind> {
        vec![
            DivergenceKind::Tv,
            DivergenceKind::Alpha { alpha: -1.0 },
            DivergenceKind::Alpha { alpha: 0.5 },
            DivergenceKind::Alpha { alpha: 2.0 },
            DivergenceKind::KlForward,
            DivergenceKind::KlReverse,
        ]
    }

    pub fn label(&self) -> String {
        match self {
            DivergenceKind::Tv => "tv".into(),
            DivergenceKind::Alpha { alpha } => format!("alpha({alpha})"),
            DivergenceKind::KlForward => "kl_forward".into(),
            DivergenceKind::KlReverse => "kl_reverse".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    #[serde(flatten)]
    pub kind: DivergenceKind,
    pub method: EstimateMethod,
    pub value: f64,
    pub err_estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<GridSpec>,
}

impl DivergenceEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// `θ ↦ log{[p(θ) + p(2θ̂ - θ)] / 2}`.
pub fn symmetrize_logpdf<'a>(
    log_p: impl Fn(&[f64]) -> f64 + Sync + 'a,
    center: &[f64],
) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    let center = center.to_vec();
    move |theta: &[f64]| {
        let back = mirror(theta, &center);
        log_add_exp(log_p(theta), log_p(back.as_slice())) - LN_2
    }
}

fn check_mass(which: &'static str, lp: &[f64], w: &[f64]) -> Result<()> {
    let mass = log_integral(lp, w).exp();
    let deficit = 1.0 - mass;
    if !(deficit.abs() < MASS_TOLERANCE) {
        return Err(Error::DomainTooSmall { which, deficit });
    }
    Ok(())
}

fn raw_divergence(kind: DivergenceKind, lp: &[f64], lq: &[f64], grid: &GridSpec) -> Result<f64> {
    let w = &grid.weights();
    let mismatch = |i: usize| Error::SupportMismatch { at: grid.nodes().swap_remove(i) };
    let it = lp.iter().zip(lq).zip(w);
    match kind {
        DivergenceKind::Tv => Ok(0.5
            * it.map(|((&a, &b), &w)| w * (a.exp() - b.exp()).abs()).sum::<f64>()),
        DivergenceKind::Alpha { alpha } => {
            if alpha == 0.0 || alpha == 1.0 {
                return Err(Error::invalid(
                    "α ∈ {0, 1} is the KL limit; use kl_grid instead",
                ));
            }
            // Densities below SUPPORT_EPS count as zero, so a negligible
            // density divided by an underflowed one contributes nothing.
            let floor = SUPPORT_EPS.ln();
            let integral: f64 = it
                .map(|((&a, &b), &w)| {
                    let negligible = if alpha > 1.0 {
                        a <= floor
                    } else if alpha < 0.0 {
                        b <= floor
                    } else {
                        a == f64::NEG_INFINITY || b == f64::NEG_INFINITY
                    };
                    if negligible {
                        0.0
                    } else {
                        w * (alpha * a + (1.0 - alpha) * b).exp()
                    }
                })
                .sum();
            Ok((1.0 - integral) / (alpha * (1.0 - alpha)))
        }
        DivergenceKind::KlForward => kl(lp, lq, w).map_err(mismatch),
        DivergenceKind::KlReverse => kl(lq, lp, w).map_err(mismatch),
    }
}

/// `∫ p log(p/q)`; on a support violation, the offending node index.
fn kl(lp: &[f64], lq: &[f64], w: &[f64]) -> std::result::Result<f64, usize> {
    let floor = SUPPORT_EPS.ln();
    let mut s = 0.0;
    for (i, ((&a, &b), &w)) in lp.iter().zip(lq).zip(w).enumerate() {
        if a <= floor || a == f64::NEG_INFINITY {
            continue;
        }
        // log-space ratio stays finite for tiny q; only a vanished q is fatal
        if b == f64::NEG_INFINITY {
            return Err(i);
        }
        s += w * a.exp() * (a - b);
    }
    Ok(s)
}

/// `D[p ‖ q]` from two tabulated, normalized log densities.
pub fn divergence_from_values(
    kind: DivergenceKind,
    log_p: &GridValues,
    log_q: &GridValues,
) -> Result<DivergenceEstimate> {
    if log_p.grid != log_q.grid {
        return Err(Error::invalid("densities are tabulated on different grids"));
    }
    let grid = &log_p.grid;
    let w = grid.weights();
    check_mass("p", &log_p.fine, &w)?;
    check_mass("q", &log_q.fine, &w)?;
    let value = raw_divergence(kind, &log_p.fine, &log_q.fine, grid)?;
    let coarse = raw_divergence(kind, &log_p.coarse, &log_q.coarse, &grid.coarsened())?;
    Ok(DivergenceEstimate {
        kind,
        method: EstimateMethod::Quadrature,
        value,
        err_estimate: (value - coarse).abs() + ERR_FLOOR * (1.0 + value.abs()),
        grid: Some(grid.clone()),
    })
}

/// `D[p ‖ q]` by quadrature for normalized log densities.
pub fn divergence_grid(
    kind: DivergenceKind,
    log_p: &(dyn Fn(&[f64]) -> f64 + Sync),
    log_q: &(dyn Fn(&[f64]) -> f64 + Sync),
    grid: &GridSpec,
) -> Result<DivergenceEstimate> {
    if let DivergenceKind::Alpha { alpha } = kind {
        if alpha == 0.0 || alpha == 1.0 {
            return Err(Error::invalid("α ∈ {0, 1} is the KL limit; use kl_grid instead"));
        }
    }
    divergence_from_values(kind, &GridValues::new(grid, log_p)?, &GridValues::new(grid, log_q)?)
}

/// Total variation `½ ∫ |p - q|`.
pub fn tv_grid(
    log_p: &(dyn Fn(&[f64]) -> f64 + Sync),
    log_q: &(dyn Fn(&[f64]) -> f64 + Sync),
    grid: &GridSpec,
) -> Result<DivergenceEstimate> {
    divergence_grid(DivergenceKind::Tv, log_p, log_q, grid)
}

/// `[1/(α(1-α))] (1 - ∫ p^α q^{1-α})` for `α ∉ {0, 1}`.
pub fn alpha_div_grid(
    log_p: &(dyn Fn(&[f64]) -> f64 + Sync),
    log_q: &(dyn Fn(&[f64]) -> f64 + Sync),
    alpha: f64,
    grid: &GridSpec,
) -> Result<DivergenceEstimate> {
    divergence_grid(DivergenceKind::Alpha { alpha }, log_p, log_q, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlDirection {
    Forward,
    Reverse,
}

/// Kullback–Leibler divergence `∫ p log(p/q)` (forward) or `∫ q log(q/p)`.
pub fn kl_grid(
    log_p: &(dyn Fn(&[f64]) -> f64 + Sync),
    log_q: &(dyn Fn(&[f64]) -> f64 + Sync),
    direction: KlDirection,
    grid: &GridSpec,
) -> Result<DivergenceEstimate> {
    let kind = match direction {
        KlDirection::Forward => DivergenceKind::KlForward,
        KlDirection::Reverse => DivergenceKind::KlReverse,
    };
    divergence_grid(kind, log_p, log_q, grid)
}

/// Monte Carlo total variation `½ E_q|p/q - 1|` for an unnormalized `p`,
/// normalized by importance sampling from `q`.
///
/// The error estimate is a delta-method standard error. Fails when the
/// importance weights have an effective sample size below 50.
pub fn tv_mc<R: Rng + ?Sized>(
    log_p_unnorm: &dyn Fn(&[f64]) -> f64,
    q_sample: &mut dyn FnMut(&mut R) -> DVector<f64>,
    q_logpdf: &dyn Fn(&[f64]) -> f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<DivergenceEstimate> {
    if n_samples < 2 {
        return Err(Error::invalid("tv_mc needs at least two samples"));
    }
    let mut logr = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x = q_sample(rng);
        let v = log_p_unnorm(x.as_slice()) - q_logpdf(x.as_slice());
        if v.is_nan() {
            return Err(Error::Evaluation { at: x.as_slice().to_vec() });
        }
        logr.push(v);
    }
    let top = logr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::UnreliableEstimate { ess: 0.0 });
    }
    let r: Vec<f64> = logr.iter().map(|v| (v - top).exp()).collect();
    let n = n_samples as f64;
    let sum: f64 = r.iter().sum();
    let sum2: f64 = r.iter().map(|x| x * x).sum();
    let ess = sum * sum / sum2;
    if ess < 50.0 {
        return Err(Error::UnreliableEstimate { ess });
    }
    let zbar = sum / n;
    let a: Vec<f64> = r.iter().map(|x| 0.5 * (x - zbar).abs()).collect();
    let abar = a.iter().sum::<f64>() / n;
    let value = abar / zbar;
    // delta method for the ratio of means abar / zbar
    let var = a
        .iter()
        .zip(&r)
        .map(|(ai, ri)| (ai - value * ri).powi(2))
        .sum::<f64>()
        / (n - 1.0)
        / (zbar * zbar)
        / n;
    Ok(DivergenceEstimate {
        kind: DivergenceKind::Tv,
        method: EstimateMethod::MonteCarlo,
        value,
        err_estimate: var.sqrt(),
        grid: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{norm_cdf, norm_logpdf};

    fn std_normal(mu: f64) -> impl Fn(&[f64]) -> f64 + Sync {
        move |t: &[f64]| norm_logpdf(t[0] - mu)
    }

    fn grid_1d() -> GridSpec {
        GridSpec::new(vec![-12.0], vec![13.0], 4096).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(vec![0.0], vec![1.0], 63).is_err());
        assert!(GridSpec::new(vec![1.0], vec![0.0], 64).is_err());
        assert!(GridSpec::new(vec![0.0; 3], vec![1.0; 3], 64).is_err());
        let g = GridSpec::new(vec![0.0, -1.0], vec![1.0, 1.0], 64).unwrap();
        assert_eq!(g.nodes().len(), 4096);
        assert!((g.weights().iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(g.is_symmetric_about(&[0.5, 0.0]));
        assert!(!g.is_symmetric_about(&[0.4, 0.0]));
    }

    #[test]
    fn identical_densities_have_zero_divergence() {
        let p = std_normal(0.0);
        for kind in DivergenceKind::battery() {
            let est = divergence_grid(kind, &p, &p, &grid_1d()).unwrap();
            assert!(est.value.abs() < 1e-10, "{kind:?}: {}", est.value);
        }
    }

    #[test]
    fn gaussian_shift_closed_forms() {
        let (p, q) = (std_normal(0.0), std_normal(1.0));
        let g = grid_1d();
        let tv = tv_grid(&p, &q, &g).unwrap();
        assert!((tv.value - (2.0 * norm_cdf(0.5) - 1.0)).abs() < 1e-6);
        let a = alpha_div_grid(&p, &q, 0.5, &g).unwrap();
        assert!((a.value - 4.0 * (1.0 - (-1.0f64 / 8.0).exp())).abs() < 1e-6);
        let kf = kl_grid(&p, &q, KlDirection::Forward, &g).unwrap();
        assert!((kf.value - 0.5).abs() < 1e-8);
        let kr = kl_grid(&p, &q, KlDirection::Reverse, &g).unwrap();
        assert!((kr.value - 0.5).abs() < 1e-8);
    }

    #[test]
    fn alpha_limits_approach_kl() {
        // unequal variances make the two KL directions differ
        let p = std_normal(0.0);
        let q = |t: &[f64]| norm_logpdf((t[0] - 0.5) / 1.5) - 1.5f64.ln();
        let g = GridSpec::new(vec![-20.0], vec![20.0], 8192).unwrap();
        let kf = kl_grid(&p, &q, KlDirection::Forward, &g).unwrap().value;
        let kr = kl_grid(&p, &q, KlDirection::Reverse, &g).unwrap().value;
        assert!((alpha_div_grid(&p, &q, 0.999, &g).unwrap().value - kf).abs() < 1e-2);
        assert!((alpha_div_grid(&p, &q, 0.001, &g).unwrap().value - kr).abs() < 1e-2);
        assert!((kf - kr).abs() > 0.05);
    }

    #[test]
    fn alpha_at_kl_limits_is_rejected() {
        let p = std_normal(0.0);
        for a in [0.0, 1.0] {
            assert!(matches!(alpha_div_grid(&p, &p, a, &grid_1d()), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn narrow_domain_reports_deficit() {
        let p = std_normal(0.0);
        let g = GridSpec::new(vec![-3.0], vec![3.0], 256).unwrap();
        match tv_grid(&p, &p, &g) {
            Err(Error::DomainTooSmall { deficit, .. }) => assert!((deficit - 0.0027).abs() < 1e-4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn support_mismatch_in_kl() {
        let p = std_normal(0.0);
        let q = |t: &[f64]| {
            if t[0] < -10.0 {
                f64::NEG_INFINITY
            } else {
                norm_logpdf(t[0])
            }
        };
        let r = kl_grid(&p, &q, KlDirection::Forward, &grid_1d());
        assert!(matches!(r, Err(Error::SupportMismatch { .. })), "{r:?}");
        // the reverse direction only needs p > 0 where q > 0
        assert!(kl_grid(&p, &q, KlDirection::Reverse, &grid_1d()).is_ok());
    }

    #[test]
    fn symmetrized_density_is_even() {
        let s = symmetrize_logpdf(std_normal(1.0), &[0.0]);
        for k in 0..100 {
            let t = -5.0 + 0.1 * k as f64;
            assert!((s(&[t]) - s(&[-t])).abs() < 1e-12);
            let direct = (0.5 * (norm_logpdf(t - 1.0).exp() + norm_logpdf(t + 1.0).exp())).ln();
            assert!((s(&[t]) - direct).abs() < 1e-12);
        }
        let p = std_normal(0.0);
        let s = symmetrize_logpdf(std_normal(0.0), &[0.0]);
        assert!((s(&[0.7]) - p(&[0.7])).abs() < 1e-15);
    }

    #[test]
    fn refinement_changes_tv_by_less_than_error_estimate() {
        let (p, q) = (std_normal(0.0), std_normal(0.3));
        let g = GridSpec::new(vec![-12.0], vec![12.3], 1024).unwrap();
        let a = tv_grid(&p, &q, &g).unwrap();
        let b = tv_grid(&p, &q, &g.refined()).unwrap();
        assert!((a.value - b.value).abs() < a.err_estimate);
    }

    #[test]
    fn two_dimensional_gaussians() {
        let p = |t: &[f64]| norm_logpdf(t[0]) + norm_logpdf(t[1]);
        let q = |t: &[f64]| norm_logpdf(t[0] - 0.6) + norm_logpdf(t[1] + 0.8);
        let g = GridSpec::new(vec![-12.0, -12.0], vec![12.0, 12.0], 512).unwrap();
        // equal-covariance Gaussians: KL = |Δμ|²/2, TV = 2Φ(|Δμ|/2) - 1
        let kf = kl_grid(&p, &q, KlDirection::Forward, &g).unwrap();
        assert!((kf.value - 0.5).abs() < 1e-8);
        let tv = tv_grid(&p, &q, &g).unwrap();
        assert!((tv.value - (2.0 * norm_cdf(0.5) - 1.0)).abs() < 1e-5);
    }

    #[test]
    fn json_report_shape() {
        let p = std_normal(0.0);
        let est = alpha_div_grid(&p, &p, 2.0, &GridSpec::new(vec![-12.0], vec![12.0], 64).unwrap())
            .unwrap();
        let v: serde_json::Value = serde_json::from_str(&est.to_json().unwrap()).unwrap();
        assert_eq!(v["kind"], "alpha");
        assert_eq!(v["alpha"], 2.0);
        assert_eq!(v["method"], "quadrature");
        assert_eq!(v["grid"]["points"], 64);
        let back: DivergenceEstimate = serde_json::from_value(v).unwrap();
        assert_eq!(back, est);
    }

    #[test]
    fn monte_carlo_tv_of_identical_densities() {
        use rand::SeedableRng;
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = |t: &[f64]| norm_logpdf(t[0]) + 3.0;
        let est = tv_mc(
            &p,
            &mut |r: &mut rand_chacha::ChaCha8Rng| DVector::from_element(1, r.sample::<f64, _>(StandardNormal)),
            &|t: &[f64]| norm_logpdf(t[0]),
            10_000,
            &mut rng,
        )
        .unwrap();
        assert!(est.value <= 3.0 * est.err_estimate + 1e-12);
    }

    #[test]
    fn monte_carlo_tv_matches_grid() {
        use rand::SeedableRng;
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let p = |t: &[f64]| norm_logpdf(t[0] - 0.5);
        let q = |t: &[f64]| norm_logpdf(t[0] / 1.2) - 1.2f64.ln();
        let est = tv_mc(
            &p,
            &mut |r: &mut rand_chacha::ChaCha8Rng| DVector::from_element(1, 1.2 * r.sample::<f64, _>(StandardNormal)),
            &q,
            200_000,
            &mut rng,
        )
        .unwrap();
        let grid = tv_grid(&p, &q, &GridSpec::new(vec![-15.0], vec![15.0], 4096).unwrap()).unwrap();
        assert!((est.value - grid.value).abs() < 3.0 * est.err_estimate, "{} vs {}", est.value, grid.value);
    }

    #[test]
    fn monte_carlo_rejects_degenerate_weights() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = |t: &[f64]| -1e4 * (t[0] - 5.0).powi(2);
        let est = tv_mc(
            &p,
            &mut |r: &mut rand_chacha::ChaCha8Rng| DVector::from_element(1, r.random::<f64>()),
            &|_: &[f64]| 0.0,
            1000,
            &mut rng,
        );
        assert!(matches!(est, Err(Error::UnreliableEstimate { .. })));
    }
}
