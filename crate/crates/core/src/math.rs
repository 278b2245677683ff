//! Scalar numerics shared by the likelihoods, the skewness factor and the
//! quadrature code. Everything here works in log space where it can.

use libm::erfc;

pub const LN_2: f64 = std::f64::consts::LN_2;
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `log(exp(a) + exp(b))` with the `-inf` cases handled.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(logistic(x))`.
pub fn log_logistic(x: f64) -> f64 {
    -softplus(-x)
}

pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_pdf(x: f64) -> f64 {
    norm_logpdf(x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `log Phi(x)`, using the asymptotic Mills-ratio series once `erfc`
/// would underflow.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 5.0 {
        // Phi(x) = 1 - Phi(-x), and Phi(-x) is tiny
        return (-norm_cdf(-x)).ln_1p();
    }
    if x > -20.0 {
        return norm_cdf(x).ln();
    }
    let z2 = x * x;
    let mut term = 1.0;
    let mut series = 1.0;
    for k in 1..=12 {
        term *= -((2 * k - 1) as f64) / z2;
        series += term;
    }
    -0.5 * z2 - (-x).ln() - LN_SQRT_2PI + series.ln()
}

/// Inverse Mills ratio `phi(x) / Phi(x)`, stable for very negative `x`.
pub fn inv_mills(x: f64) -> f64 {
    (norm_logpdf(x) - log_norm_cdf(x)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_norm_cdf_is_continuous_across_branches() {
        for &x in &[-20.0_f64, 5.0] {
            let lo = log_norm_cdf(x - 1e-9);
            let hi = log_norm_cdf(x + 1e-9);
            assert!((lo - hi).abs() < 1e-6 * lo.abs().max(1e-12), "{x}: {lo} {hi}");
        }
        // reference: log Phi(-30) from mpmath
        assert!((log_norm_cdf(-30.0) - (-454.321_243_956_343)).abs() < 1e-9);
        assert!(log_norm_cdf(-40.0).is_finite());
    }

    #[test]
    fn inverse_mills_matches_tail_asymptote() {
        let x = -50.0;
        // lambda(x) ~ -x - 1/x for x -> -inf
        assert!((inv_mills(x) - (-x - 1.0 / x)).abs() < 1e-4);
        assert!((inv_mills(0.0) - 2.0 * norm_pdf(0.0)).abs() < 1e-15);
    }

    #[test]
    fn logistic_and_softplus_extremes() {
        assert_eq!(logistic(800.0), 1.0);
        assert_eq!(logistic(-800.0), 0.0);
        assert!((softplus(0.0) - LN_2).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - LN_2).abs() < 1e-15);
    }
}
