//! Elementary log-densities used by the likelihood, priors, and hyperpriors.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// log N(x; mean, sd)
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// log LogNormal(x; location, scale): log x is N(location, scale).
pub fn lognormal_logpdf(x: f64, location: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    normal_logpdf(x.ln(), location, scale) - x.ln()
}

/// log Exp(x; rate)
pub fn exponential_logpdf(x: f64, rate: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    rate.ln() - rate * x
}

/// log Exp(x; mean): rate = 1/mean. Used for seeded incidence.
pub fn exponential_mean_logpdf(x: f64, mean: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    -mean.ln() - x / mean
}

/// log Gamma(x; shape, rate)
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// log of the normal density truncated to (0, inf), renormalized.
pub fn truncnormal_lower0_logpdf(x: f64, location: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    normal_logpdf(x, location, scale) - truncnormal_lower0_log_normalizer(location, scale)
}

/// log P(X > 0) for X ~ N(location, scale); the truncation constant.
pub fn truncnormal_lower0_log_normalizer(location: f64, scale: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    (1.0 - std.cdf(-location / scale)).ln()
}

/// Negative binomial log-pmf in the (mean, overdispersion) parameterization:
/// Var = mean + mean^2 / kappa, with the Poisson limit as kappa -> inf.
pub fn neg_binomial_logpmf(k: u64, mean: f64, kappa: f64) -> f64 {
    if mean <= 0.0 || kappa <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let kf = k as f64;
    let denom = (kappa + mean).ln();
    ln_gamma(kf + kappa) - ln_gamma(kappa) - ln_gamma(kf + 1.0)
        + kappa * (kappa.ln() - denom)
        + kf * (mean.ln() - denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{Continuous, Gamma as SrGamma, LogNormal as SrLogNormal};

    #[test]
    fn normal_matches_known_value() {
        // N(0,1) at 0: -0.5 ln(2 pi)
        assert_relative_eq!(normal_logpdf(0.0, 0.0, 1.0), -0.9189385332046727, epsilon = 1e-14);
    }

    #[test]
    fn gamma_matches_statrs() {
        let d = SrGamma::new(3.2, 1.7).unwrap();
        for x in [0.1, 1.0, 4.5] {
            assert_relative_eq!(gamma_logpdf(x, 3.2, 1.7), d.ln_pdf(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn lognormal_matches_statrs() {
        let d = SrLogNormal::new(-2.0, 0.7).unwrap();
        for x in [0.01, 0.135, 2.0] {
            assert_relative_eq!(lognormal_logpdf(x, -2.0, 0.7), d.ln_pdf(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn truncnormal_integrates_prior_mass_to_positive_axis() {
        // With location far above 0 the truncation constant is ~0.
        assert_relative_eq!(
            truncnormal_lower0_logpdf(70.0, 70.0, 1.0),
            normal_logpdf(70.0, 70.0, 1.0),
            epsilon = 1e-10
        );
        // Location 0: exactly half the mass is cut, normalizer = ln(1/2).
        assert_relative_eq!(
            truncnormal_lower0_logpdf(1.0, 0.0, 1.0),
            normal_logpdf(1.0, 0.0, 1.0) + std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn neg_binomial_poisson_limit() {
        // kappa -> inf: log-pmf at k=0 tends to -mean.
        let m = 3.7;
        assert_relative_eq!(neg_binomial_logpmf(0, m, 1e8), -m, epsilon = 1e-4);
        // and matches the Poisson log-pmf at k=5 per observation.
        let k = 5u64;
        let pois = -m + (k as f64) * m.ln() - ln_gamma(k as f64 + 1.0);
        assert!((neg_binomial_logpmf(k, m, 1e8) - pois).abs() < 1e-4);
    }

    #[test]
    fn neg_binomial_sums_to_one() {
        let (mean, kappa) = (2.0, 5.0);
        let total: f64 = (0..500).map(|k| neg_binomial_logpmf(k, mean, kappa).exp()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-10);
    }
}
