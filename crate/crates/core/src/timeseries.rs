//! Core time-series types: weekly case counts, discretized lag distributions,
//! and empirical quantiles.

use crate::error::{Error, Result};
use chrono::NaiveDate;
use statrs::distribution::{ContinuousCDF, Gamma};

/// Observation cadence in days. Weekly is the only supported step.
pub const STEP_DAYS: u32 = 7;

/// Cumulative-mass target used when the number of lags is chosen
/// automatically: the smallest k with CDF((k+1) * step) >= this.
const AUTO_MASS_TARGET: f64 = 0.999;

/// Dated, regularly spaced weekly counts of observed cases.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSeries {
    start_date: NaiveDate,
    counts: Vec<u64>,
}

impl CaseSeries {
    pub fn new(start_date: NaiveDate, counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::Data(format!(
                "case series needs at least 2 observations, got {}",
                counts.len()
            )));
        }
        Ok(Self { start_date, counts })
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Date of the 0-based week index.
    pub fn date(&self, index: usize) -> NaiveDate {
        self.start_date + chrono::Duration::days(i64::from(STEP_DAYS) * index as i64)
    }

    /// The first `weeks` observations, used by the real-time protocol.
    pub fn truncated(&self, weeks: usize) -> Result<Self> {
        if weeks < 2 || weeks > self.counts.len() {
            return Err(Error::Data(format!(
                "cannot truncate series of length {} to {weeks}",
                self.counts.len()
            )));
        }
        Ok(Self {
            start_date: self.start_date,
            counts: self.counts[..weeks].to_vec(),
        })
    }

    /// Read a `date,cases` CSV. Dates must be ISO-8601 and advance in
    /// consecutive 7-day steps.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        {
            let headers = rdr.headers()?;
            if headers.len() < 2 || &headers[0] != "date" || &headers[1] != "cases" {
                return Err(Error::Data(format!(
                    "expected header `date,cases`, got `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
        let mut dates = Vec::new();
        let mut counts = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| Error::Data(format!("row {}: bad date `{}`: {e}", i + 1, &rec[0])))?;
            let cases: u64 = rec[1]
                .trim()
                .parse()
                .map_err(|e| Error::Data(format!("row {}: bad count `{}`: {e}", i + 1, &rec[1])))?;
            dates.push(date);
            counts.push(cases);
        }
        for w in dates.windows(2) {
            let gap = (w[1] - w[0]).num_days();
            if gap != i64::from(STEP_DAYS) {
                return Err(Error::Data(format!(
                    "dates must advance in {STEP_DAYS}-day steps; {} -> {} is {gap} days",
                    w[0], w[1]
                )));
            }
        }
        let start = *dates.first().ok_or(Error::EmptySample)?;
        Self::new(start, counts)
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }
}

/// What a discretized PMF represents; generation-time PMFs carry no lag-0 mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmfKind {
    Generation,
    Delay,
}

/// Finite probability vector over integer lags (in observation steps).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedPmf {
    probs: Vec<f64>,
    kind: PmfKind,
}

impl DiscretizedPmf {
    /// Build from explicit probabilities, normalizing to sum 1.
    pub fn from_probs(probs: Vec<f64>, kind: PmfKind) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("empty pmf".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidParameter("pmf entries must be finite and >= 0".into()));
        }
        if kind == PmfKind::Generation && probs[0] != 0.0 {
            return Err(Error::InvalidParameter(
                "generation-time pmf must have zero mass at lag 0".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if total < 1e-10 {
            return Err(Error::DegenerateDistribution("pmf mass is zero".into()));
        }
        let probs = probs.into_iter().map(|p| p / total).collect();
        Ok(Self { probs, kind })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn kind(&self) -> PmfKind {
        self.kind
    }

    /// Largest lag index carried by the PMF.
    pub fn max_lag(&self) -> usize {
        self.probs.len() - 1
    }
}

/// Discretize a gamma distribution onto integer lags by CDF differences:
/// p_k is the mass on [k*step, (k+1)*step), renormalized. For
/// `PmfKind::Generation` the lag-0 mass is forced to zero before
/// renormalizing. With `max_lags = None` the number of lags is the smallest
/// k whose cumulative mass reaches 99.9%.
pub fn discretize_gamma(
    mean: f64,
    sd: f64,
    step: f64,
    max_lags: Option<usize>,
    kind: PmfKind,
) -> Result<DiscretizedPmf> {
    if !(mean > 0.0) || !(sd > 0.0) || !(step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "discretize_gamma requires positive mean/sd/step, got mean={mean} sd={sd} step={step}"
        )));
    }
    if let Some(l) = max_lags {
        if l < 1 {
            return Err(Error::InvalidParameter("max_lags must be >= 1".into()));
        }
    }
    let shape = mean * mean / (sd * sd);
    let rate = mean / (sd * sd);
    let gamma = Gamma::new(shape, rate)
        .map_err(|e| Error::InvalidParameter(format!("gamma({shape},{rate}): {e}")))?;

    let top = match max_lags {
        Some(l) => l,
        None => {
            let mut k = 1usize;
            while gamma.cdf((k as f64 + 1.0) * step) < AUTO_MASS_TARGET && k < 10_000 {
                k += 1;
            }
            k
        }
    };

    let mut probs = Vec::with_capacity(top + 1);
    for k in 0..=top {
        let lo = gamma.cdf(k as f64 * step);
        let hi = gamma.cdf((k as f64 + 1.0) * step);
        probs.push((hi - lo).max(0.0));
    }
    if kind == PmfKind::Generation {
        probs[0] = 0.0;
    }
    let total: f64 = probs.iter().sum();
    if total < 1e-10 {
        return Err(Error::DegenerateDistribution(format!(
            "all gamma mass truncated away (sum {total:.3e})"
        )));
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok(DiscretizedPmf { probs, kind })
}

/// Type-7 (linear interpolation) empirical quantile. Sorts internally.
pub fn weighted_quantile(draws: &[f64], q: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..1.0).contains(&q) || q == 0.0 {
        return Err(Error::InvalidParameter(format!("quantile level {q} not in (0,1)")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    Ok(quantile_sorted(&sorted, q))
}

/// Type-7 quantile of an already-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn csv_roundtrip_and_validation() {
        let ok = "date,cases\n2020-06-01,10\n2020-06-08,12\n2020-06-15,9\n";
        let s = CaseSeries::from_csv_reader(ok.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.counts(), &[10, 12, 9]);
        assert_eq!(s.date(2), date("2020-06-15"));

        let gap = "date,cases\n2020-06-01,10\n2020-06-09,12\n";
        assert!(CaseSeries::from_csv_reader(gap.as_bytes()).is_err());

        let short = "date,cases\n2020-06-01,10\n";
        assert!(CaseSeries::from_csv_reader(short.as_bytes()).is_err());
    }

    #[test]
    fn discretize_weekly_generation_time() {
        // Mean 4.6 d, sd 1.2 d against a 7-day step: nearly all mass below
        // one week, so after zeroing lag 0 the pmf concentrates at lag 1.
        // Expected values from direct CDF evaluation (independent oracle in
        // oracle_cdf_differences below).
        let pmf = discretize_gamma(4.6, 1.2, 7.0, Some(3), PmfKind::Generation).unwrap();
        assert_eq!(pmf.probs()[0], 0.0);
        assert!(pmf.probs()[1] > 0.95, "p1 = {}", pmf.probs()[1]);
        assert_relative_eq!(pmf.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_cdf_differences() {
        // Numerically integrate the gamma pdf per bin (midpoint rule, fine
        // grid) and compare with the CDF-difference discretization.
        let (mean, sd, step) = (4.6, 1.2, 7.0);
        let shape = mean * mean / (sd * sd);
        let rate = mean / (sd * sd);
        let pdf = |x: f64| crate::dist::gamma_logpdf(x, shape, rate).exp();
        let bin_mass = |k: usize| {
            let (lo, hi) = (k as f64 * step, (k as f64 + 1.0) * step);
            let m = 40_000;
            let h = (hi - lo) / m as f64;
            (0..m).map(|i| pdf(lo + (i as f64 + 0.5) * h) * h).sum::<f64>()
        };
        let raw: Vec<f64> = (0..=3).map(bin_mass).collect();
        // generation kind: zero out lag 0 and renormalize
        let total: f64 = raw[1..].iter().sum();
        let expect: Vec<f64> = std::iter::once(0.0).chain(raw[1..].iter().map(|p| p / total)).collect();
        let pmf = discretize_gamma(mean, sd, step, Some(3), PmfKind::Generation).unwrap();
        for (a, b) in pmf.probs().iter().zip(&expect) {
            assert_relative_eq!(a, b, epsilon = 1e-7);
        }
    }

    #[test]
    fn exponential_case_has_memoryless_bin_ratios() {
        // mean == sd is the exponential; consecutive bins decay by
        // exp(-step/mean).
        let (mean, step) = (4.0, 7.0);
        let pmf = discretize_gamma(mean, mean, step, Some(5), PmfKind::Delay).unwrap();
        let ratio = (-step / mean).exp();
        for w in pmf.probs().windows(2) {
            assert_relative_eq!(w[1] / w[0], ratio, epsilon = 1e-9);
        }
    }

    #[test]
    fn delay_keeps_lag0_mass() {
        let pmf = discretize_gamma(4.6, 1.2, 7.0, Some(3), PmfKind::Delay).unwrap();
        assert!(pmf.probs()[0] > 0.0);
    }

    #[test]
    fn degenerate_when_all_mass_truncated() {
        // Mean far above max_lags * step with a tiny sd: no mass in kept bins.
        let r = discretize_gamma(1000.0, 1.0, 1.0, Some(2), PmfKind::Delay);
        assert!(matches!(r, Err(Error::DegenerateDistribution(_))));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(discretize_gamma(-1.0, 1.0, 7.0, Some(2), PmfKind::Delay).is_err());
        assert!(discretize_gamma(1.0, 0.0, 7.0, Some(2), PmfKind::Delay).is_err());
        assert!(discretize_gamma(1.0, 1.0, 7.0, Some(0), PmfKind::Delay).is_err());
    }

    #[test]
    fn auto_lag_selection_reaches_mass_target() {
        let pmf = discretize_gamma(11.5, 8.5, 7.0, None, PmfKind::Generation).unwrap();
        let shape = 11.5f64 * 11.5 / (8.5 * 8.5);
        let rate = 11.5 / (8.5f64 * 8.5);
        let g = Gamma::new(shape, rate).unwrap();
        let l = pmf.max_lag();
        assert!(g.cdf((l as f64 + 1.0) * 7.0) >= 0.999);
        assert!(l >= 2 || g.cdf(2.0 * 7.0) >= 0.999);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(weighted_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap(), 3.0);
        // hand-applied type-7: h = (2-1)*0.975 = 0.975 -> 0 + 0.975*(10-0)
        assert_relative_eq!(weighted_quantile(&[0.0, 10.0], 0.975).unwrap(), 9.75, epsilon = 1e-12);
        assert_eq!(weighted_quantile(&[7.0, 7.0, 7.0], 0.123).unwrap(), 7.0);
        assert!(matches!(weighted_quantile(&[], 0.5), Err(Error::EmptySample)));
    }

    proptest! {
        #[test]
        fn discretization_normalizes(mean in 0.5f64..40.0, sd in 0.3f64..20.0, lags in 1usize..30) {
            if let Ok(pmf) = discretize_gamma(mean, sd, 7.0, Some(lags), PmfKind::Delay) {
                let s: f64 = pmf.probs().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(pmf.probs().iter().all(|p| *p >= 0.0));
            }
        }

        #[test]
        fn extending_lags_preserves_prefix_ratios(mean in 2.0f64..30.0, sd in 1.0f64..10.0) {
            let a = discretize_gamma(mean, sd, 7.0, Some(3), PmfKind::Delay).unwrap();
            let b = discretize_gamma(mean, sd, 7.0, Some(6), PmfKind::Delay).unwrap();
            // appended mass only rescales: prefix ratios are unchanged
            for i in 0..3 {
                if a.probs()[i] > 1e-12 && a.probs()[i + 1] > 1e-12 {
                    let ra = a.probs()[i + 1] / a.probs()[i];
                    let rb = b.probs()[i + 1] / b.probs()[i];
                    prop_assert!((ra - rb).abs() < 1e-9 * ra.abs().max(1.0), "ratio changed: {} vs {}", ra, rb);
                }
            }
        }

        #[test]
        fn quantile_monotone_and_affine_equivariant(
            mut xs in proptest::collection::vec(-50.0f64..50.0, 1..40),
            q1 in 0.01f64..0.99,
            q2 in 0.01f64..0.99,
            a in 0.1f64..5.0,
            b in -10.0f64..10.0,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let vlo = weighted_quantile(&xs, lo).unwrap();
            let vhi = weighted_quantile(&xs, hi).unwrap();
            prop_assert!(vlo <= vhi + 1e-12);
            let mapped: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let vm = weighted_quantile(&mapped, lo).unwrap();
            prop_assert!((vm - (a * vlo + b)).abs() < 1e-9 * (1.0 + vm.abs()));
            xs.clear();
        }
    }
}
