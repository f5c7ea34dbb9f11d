//! The hierarchical case-count likelihood: seeded incidence, the stochastic
//! renewal equation for latent incidence, and the negative binomial
//! observation model.

use crate::dist::{exponential_mean_logpdf, gamma_logpdf, neg_binomial_logpmf};
use crate::error::{Error, Result};
use crate::timeseries::{CaseSeries, DiscretizedPmf, PmfKind};

/// Latent incidence: seeded values I_{-n}..I_0 and the observed-period
/// values I_1..I_T, all strictly positive reals.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentIncidence {
    seeded: Vec<f64>,
    observed: Vec<f64>,
}

impl LatentIncidence {
    pub fn new(seeded: Vec<f64>, observed: Vec<f64>) -> Result<Self> {
        if seeded.is_empty() || observed.is_empty() {
            return Err(Error::InvalidParameter("incidence vectors must be non-empty".into()));
        }
        if seeded.iter().chain(observed.iter()).any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidParameter("incidence must be strictly positive".into()));
        }
        Ok(Self { seeded, observed })
    }

    /// Seeding length n; the seeded vector holds n+1 values I_{-n}..I_0.
    pub fn seeding_len(&self) -> usize {
        self.seeded.len() - 1
    }

    /// Observed-period length T.
    pub fn horizon(&self) -> usize {
        self.observed.len()
    }

    pub fn seeded(&self) -> &[f64] {
        &self.seeded
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    /// I_j for j in -n ..= T.
    pub fn value(&self, j: i64) -> f64 {
        let n = self.seeding_len() as i64;
        debug_assert!(j >= -n && j <= self.observed.len() as i64);
        if j <= 0 {
            self.seeded[(j + n) as usize]
        } else {
            self.observed[(j - 1) as usize]
        }
    }
}

/// The renewal load at time t: Lambda_t = sum_j g_{t-j} I_j over lags
/// 1 <= t-j <= L (the generation pmf carries no lag-0 mass).
pub fn renewal_load(incidence: &LatentIncidence, g: &DiscretizedPmf, t: usize) -> Result<f64> {
    if g.kind() != PmfKind::Generation {
        return Err(Error::InvalidParameter("renewal load needs a generation-time pmf".into()));
    }
    check_t(incidence, t)?;
    Ok(convolve(incidence, g.probs(), t as i64, 1))
}

/// The delayed-detection load at time t: D_t = sum_j I_j d_{t-j}, including
/// the lag-0 term.
pub fn delay_load(incidence: &LatentIncidence, d: &DiscretizedPmf, t: usize) -> Result<f64> {
    check_t(incidence, t)?;
    Ok(convolve(incidence, d.probs(), t as i64, 0))
}

fn check_t(incidence: &LatentIncidence, t: usize) -> Result<()> {
    if t < 1 || t > incidence.horizon() {
        return Err(Error::IndexError {
            index: t as i64,
            lo: 1,
            hi: incidence.horizon() as i64,
        });
    }
    Ok(())
}

/// sum over lags k = min_lag..=L of pmf[k] * I_{t-k}, truncated at j >= -n.
pub(crate) fn convolve(incidence: &LatentIncidence, probs: &[f64], t: i64, min_lag: usize) -> f64 {
    let n = incidence.seeding_len() as i64;
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate().skip(min_lag) {
        let j = t - k as i64;
        if j < -n {
            break;
        }
        acc += p * incidence.value(j);
    }
    acc
}

/// Observation log-likelihood: O_t ~ NegBinom(mean rho * D_t, overdispersion
/// kappa) summed over the observed weeks.
pub fn loglik_obs(
    cases: &CaseSeries,
    incidence: &LatentIncidence,
    rho: f64,
    kappa: f64,
    d: &DiscretizedPmf,
) -> Result<f64> {
    if cases.len() != incidence.horizon() {
        return Err(Error::AlignmentError(format!(
            "cases length {} != incidence horizon {}",
            cases.len(),
            incidence.horizon()
        )));
    }
    if !(rho > 0.0 && kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("rho {rho} and kappa {kappa} must be > 0")));
    }
    let mut lp = 0.0;
    for (t0, &obs) in cases.counts().iter().enumerate() {
        let load = convolve(incidence, d.probs(), t0 as i64 + 1, 0);
        let mean = rho * load;
        if !(mean > 0.0) {
            return Err(Error::InvalidState(format!(
                "non-positive case mean at week {}: rho {rho} * load {load}",
                t0 + 1
            )));
        }
        lp += neg_binomial_logpmf(obs, mean, kappa);
    }
    Ok(lp)
}

/// Incidence log-likelihood: exponential seeds with mean lambda, then
/// I_t ~ Gamma(shape e^{Gamma_t} * Lambda_t * nu, rate nu) over the observed
/// period. Conditional mean R_t * Lambda_t, conditional variance mean / nu.
pub fn loglik_incidence(
    incidence: &LatentIncidence,
    gamma: &[f64],
    nu: f64,
    lambda: f64,
    g: &DiscretizedPmf,
) -> Result<f64> {
    if gamma.len() != incidence.horizon() {
        return Err(Error::AlignmentError(format!(
            "gamma length {} != incidence horizon {}",
            gamma.len(),
            incidence.horizon()
        )));
    }
    if !(nu > 0.0 && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("nu {nu} and lambda {lambda} must be > 0")));
    }
    if g.kind() != PmfKind::Generation {
        return Err(Error::InvalidParameter("incidence likelihood needs a generation pmf".into()));
    }
    let mut lp = 0.0;
    for &seed in incidence.seeded() {
        lp += exponential_mean_logpdf(seed, lambda);
    }
    for t0 in 0..incidence.horizon() {
        let load = convolve(incidence, g.probs(), t0 as i64 + 1, 1);
        let shape = gamma[t0].exp() * load * nu;
        if !(shape > 0.0) {
            return Err(Error::InvalidState(format!(
                "non-positive gamma shape at week {}: load {load}",
                t0 + 1
            )));
        }
        lp += gamma_logpdf(incidence.observed()[t0], shape, nu);
    }
    Ok(lp)
}

/// Ascertainment, overdispersion, incidence noise, and seeding mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceParams {
    pub rho: f64,
    pub kappa: f64,
    pub nu: f64,
    pub lambda: f64,
}

impl NuisanceParams {
    pub fn new(rho: f64, kappa: f64, nu: f64, lambda: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho must be in (0,1), got {rho}")));
        }
        if !(kappa > 0.0 && nu > 0.0 && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa {kappa}, nu {nu}, lambda {lambda} must be > 0"
            )));
        }
        Ok(Self { rho, kappa, nu, lambda })
    }
}
