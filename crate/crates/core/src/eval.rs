//! Retrospective and real-time benchmarking: accuracy and coverage metrics,
//! the threshold decision score, the iterative refit protocol, and replicate
//! batch runs against simulated ground truth.

use crate::error::{Error, Result};
use crate::fit::{fit_model, rt_draws_at_week, FitResult};
use crate::model::{ModelSpec, RenewalModel};
use crate::priors::PriorKind;
use crate::sampler::SamplerConfig;
use crate::seeds::sub_seed;
use crate::seirs::{observe_cases, simulate_seirs, SeirsParams};
use crate::timeseries::{weighted_quantile, CaseSeries};
use chrono::NaiveDate;
use rayon::prelude::*;

/// Posterior quantile levels reported for every week.
pub const QUANTILE_LEVELS: [f64; 7] = [0.005, 0.025, 0.1, 0.5, 0.9, 0.975, 0.995];

/// Per-week posterior quantiles of R_t at [`QUANTILE_LEVELS`].
#[derive(Debug, Clone)]
pub struct RtPosteriorSummary {
    quantiles: Vec<[f64; 7]>,
}

impl RtPosteriorSummary {
    /// Summarize per-week pooled posterior draws of R_t.
    pub fn from_rt_draws(per_week: &[Vec<f64>]) -> Result<Self> {
        let mut quantiles = Vec::with_capacity(per_week.len());
        for draws in per_week {
            let mut row = [0.0; 7];
            for (k, &q) in QUANTILE_LEVELS.iter().enumerate() {
                row[k] = weighted_quantile(draws, q)?;
            }
            quantiles.push(row);
        }
        Self::from_quantiles(quantiles)
    }

    pub fn from_quantiles(quantiles: Vec<[f64; 7]>) -> Result<Self> {
        for (w, row) in quantiles.iter().enumerate() {
            if row.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::InvalidState(format!("non-positive quantile at week {}", w + 1)));
            }
            if row.windows(2).any(|p| p[1] < p[0]) {
                return Err(Error::InvalidState(format!("quantile crossing at week {}", w + 1)));
            }
        }
        Ok(Self { quantiles })
    }

    pub fn horizon(&self) -> usize {
        self.quantiles.len()
    }

    pub fn level_index(level: f64) -> Option<usize> {
        QUANTILE_LEVELS.iter().position(|&q| q == level)
    }

    /// Quantile at one of the fixed levels for a 0-based week.
    pub fn quantile(&self, week: usize, level: f64) -> f64 {
        let idx = Self::level_index(level).expect("level is one of QUANTILE_LEVELS");
        self.quantiles[week][idx]
    }

    pub fn median(&self, week: usize) -> f64 {
        self.quantile(week, 0.5)
    }

    pub fn row(&self, week: usize) -> &[f64; 7] {
        &self.quantiles[week]
    }
}

/// Accuracy, coverage, and precision of one fitted trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mad: f64,
    pub envelope_95: f64,
    pub envelope_80: f64,
    pub mciw_95: f64,
    pub mciw_80: f64,
    pub decision_score_95: Option<f64>,
    pub decision_score_80: Option<f64>,
    pub cpu_minutes: f64,
}

/// MAD of the posterior median, envelope (coverage of the open credible
/// interval), and mean credible interval width, at the 80% (0.1, 0.9) and
/// 95% (0.025, 0.975) levels.
pub fn compute_metrics(summary: &RtPosteriorSummary, truth: &[f64]) -> Result<MetricReport> {
    let t_len = summary.horizon();
    if truth.len() != t_len {
        return Err(Error::AlignmentError(format!(
            "truth length {} != summary horizon {t_len}",
            truth.len()
        )));
    }
    let tf = t_len as f64;
    let mut mad = 0.0;
    let mut env95 = 0.0;
    let mut env80 = 0.0;
    let mut w95 = 0.0;
    let mut w80 = 0.0;
    for (w, &rt) in truth.iter().enumerate() {
        mad += (summary.median(w) - rt).abs();
        let lo95 = summary.quantile(w, 0.025);
        let hi95 = summary.quantile(w, 0.975);
        let lo80 = summary.quantile(w, 0.1);
        let hi80 = summary.quantile(w, 0.9);
        if rt > lo95 && rt < hi95 {
            env95 += 1.0;
        }
        if rt > lo80 && rt < hi80 {
            env80 += 1.0;
        }
        w95 += hi95 - lo95;
        w80 += hi80 - lo80;
    }
    Ok(MetricReport {
        mad: mad / tf,
        envelope_95: env95 / tf,
        envelope_80: env80 / tf,
        mciw_95: w95 / tf,
        mciw_80: w80 / tf,
        decision_score_95: None,
        decision_score_80: None,
        cpu_minutes: 0.0,
    })
}

/// Fraction of iterations whose credible interval correctly calls growth
/// (lower bound above 1 with truth above 1) or decline (upper bound below 1
/// with truth below 1). Straddling intervals never score.
pub fn decision_score(intervals: &[(f64, f64)], truth: &[f64]) -> Result<f64> {
    if intervals.len() != truth.len() {
        return Err(Error::AlignmentError(format!(
            "{} intervals vs {} truth values",
            intervals.len(),
            truth.len()
        )));
    }
    if intervals.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut correct = 0usize;
    for (&(lo, hi), &rt) in intervals.iter().zip(truth) {
        if (lo > 1.0 && rt > 1.0) || (hi < 1.0 && rt < 1.0) {
            correct += 1;
        }
    }
    Ok(correct as f64 / intervals.len() as f64)
}

/// One real-time iteration: the latest-week posterior after fitting the
/// first `t_prime` weeks.
#[derive(Debug, Clone)]
pub struct RealtimeIteration {
    pub t_prime: usize,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    pub q025: f64,
    pub q975: f64,
    pub true_rt: f64,
    pub flagged: bool,
    pub divergences: usize,
    pub cpu_minutes: f64,
}

/// Iteratively extend the dataset one week at a time from `start_weeks` to
/// the full horizon, refit, and keep only the most recent week's posterior.
/// Fits that violate the convergence thresholds are flagged, never dropped.
pub fn realtime_protocol(
    cases: &CaseSeries,
    truth_rt: &[f64],
    spec: &ModelSpec,
    cfg: &SamplerConfig,
    start_weeks: usize,
) -> Result<Vec<RealtimeIteration>> {
    let horizon = cases.len();
    if truth_rt.len() != horizon {
        return Err(Error::AlignmentError(format!(
            "truth length {} != cases length {horizon}",
            truth_rt.len()
        )));
    }
    if start_weeks < 3 || start_weeks > horizon {
        return Err(Error::InvalidParameter(format!(
            "start_weeks {start_weeks} must be in 3..={horizon}"
        )));
    }
    let iterations: Vec<usize> = (start_weeks..=horizon).collect();
    let results: Vec<Result<RealtimeIteration>> = iterations
        .par_iter()
        .map(|&t_prime| {
            let truncated = cases.truncated(t_prime)?;
            let model = RenewalModel::new(truncated.clone(), spec.clone())?;
            let mut it_cfg = cfg.clone();
            it_cfg.seed = sub_seed(cfg.seed, "realtime", t_prime as u64);
            let fit = fit_model(&truncated, &model, &it_cfg)?;
            let last = rt_draws_at_week(&model, &fit.draws, t_prime);
            Ok(RealtimeIteration {
                t_prime,
                median: weighted_quantile(&last, 0.5)?,
                q10: weighted_quantile(&last, 0.1)?,
                q90: weighted_quantile(&last, 0.9)?,
                q025: weighted_quantile(&last, 0.025)?,
                q975: weighted_quantile(&last, 0.975)?,
                true_rt: truth_rt[t_prime - 1],
                flagged: fit.diagnostics.flagged,
                divergences: fit.diagnostics.divergences,
                cpu_minutes: fit.cpu_minutes,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Decision scores over a completed real-time run at both interval levels.
pub fn realtime_decision_scores(iters: &[RealtimeIteration]) -> Result<(f64, f64)> {
    let truth: Vec<f64> = iters.iter().map(|i| i.true_rt).collect();
    let iv95: Vec<(f64, f64)> = iters.iter().map(|i| (i.q025, i.q975)).collect();
    let iv80: Vec<(f64, f64)> = iters.iter().map(|i| (i.q10, i.q90)).collect();
    Ok((decision_score(&iv95, &truth)?, decision_score(&iv80, &truth)?))
}

/// Negative binomial observation settings for simulated cases.
#[derive(Debug, Clone, Copy)]
pub struct ObservationSettings {
    pub rho: f64,
    pub kappa: f64,
}

impl Default for ObservationSettings {
    fn default() -> Self {
        Self { rho: 0.05, kappa: 5.0 }
    }
}

/// Outcome of one (replicate, prior) fit in a batch benchmark.
#[derive(Debug, Clone)]
pub struct BenchmarkRecord {
    pub replicate: usize,
    pub prior: PriorKind,
    pub metrics: Option<MetricReport>,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub divergences: usize,
    pub treedepth_hits: usize,
    pub flagged: bool,
    pub error: Option<String>,
}

/// Mean (SD) of each metric for one prior across replicates.
#[derive(Debug, Clone)]
pub struct BenchmarkSummaryRow {
    pub prior: PriorKind,
    pub n_fits: usize,
    pub n_failed: usize,
    pub n_flagged: usize,
    pub envelope_95: (f64, f64),
    pub envelope_80: (f64, f64),
    pub mad: (f64, f64),
    pub mciw_95: (f64, f64),
    pub mciw_80: (f64, f64),
    pub cpu_minutes: (f64, f64, f64),
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub records: Vec<BenchmarkRecord>,
    pub summary: Vec<BenchmarkSummaryRow>,
}

/// Simulate `n_replicates` outbreaks and fit every spec to each, collecting
/// per-fit metrics and per-prior aggregates. Failed fits are recorded with
/// their reason and excluded from aggregates.
#[allow(clippy::too_many_arguments)]
pub fn batch_benchmark(
    scenario: &SeirsParams,
    obs: &ObservationSettings,
    specs: &[ModelSpec],
    cfg: &SamplerConfig,
    n_replicates: usize,
    steps_per_week: u32,
    start_date: NaiveDate,
    master_seed: u64,
) -> Result<BenchmarkResult> {
    if n_replicates < 2 {
        return Err(Error::InvalidParameter("need at least 2 replicates".into()));
    }
    if specs.is_empty() {
        return Err(Error::InvalidParameter("need at least one model spec".into()));
    }

    // Simulated datasets are cheap; build them serially for determinism.
    let mut datasets = Vec::with_capacity(n_replicates);
    for r in 0..n_replicates {
        let truth = simulate_seirs(scenario, sub_seed(master_seed, "sim", r as u64), steps_per_week)?;
        let cases = observe_cases(
            &truth,
            obs.rho,
            obs.kappa,
            sub_seed(master_seed, "obs", r as u64),
            start_date,
        )?;
        let rt = truth.true_rt.clone();
        datasets.push((cases, rt));
    }

    let tasks: Vec<(usize, usize)> = (0..n_replicates)
        .flat_map(|r| (0..specs.len()).map(move |s| (r, s)))
        .collect();
    let records: Vec<BenchmarkRecord> = tasks
        .par_iter()
        .map(|&(r, s)| {
            let spec = &specs[s];
            let prior = spec.prior_kind;
            let (cases, truth_rt) = &datasets[r];
            let run = || -> Result<(MetricReport, FitResult)> {
                let model = RenewalModel::new(cases.clone(), spec.clone())?;
                let mut fit_cfg = cfg.clone();
                fit_cfg.seed =
                    sub_seed(master_seed, &format!("fit-{}", prior.name()), r as u64);
                let fit = fit_model(cases, &model, &fit_cfg)?;
                let mut metrics = compute_metrics(&fit.rt, truth_rt)?;
                metrics.cpu_minutes = fit.cpu_minutes;
                Ok((metrics, fit))
            };
            match run() {
                Ok((metrics, fit)) => BenchmarkRecord {
                    replicate: r,
                    prior,
                    metrics: Some(metrics),
                    max_rhat: fit.diagnostics.max_rhat,
                    min_ess: fit.diagnostics.min_ess,
                    divergences: fit.diagnostics.divergences,
                    treedepth_hits: fit.diagnostics.treedepth_hits,
                    flagged: fit.diagnostics.flagged,
                    error: None,
                },
                Err(e) => BenchmarkRecord {
                    replicate: r,
                    prior,
                    metrics: None,
                    max_rhat: f64::NAN,
                    min_ess: f64::NAN,
                    divergences: 0,
                    treedepth_hits: 0,
                    flagged: true,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let summary = specs
        .iter()
        .map(|spec| summarize_prior(spec.prior_kind, &records))
        .collect();
    Ok(BenchmarkResult { records, summary })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

fn summarize_prior(prior: PriorKind, records: &[BenchmarkRecord]) -> BenchmarkSummaryRow {
    let ok: Vec<&BenchmarkRecord> = records
        .iter()
        .filter(|r| r.prior == prior && r.metrics.is_some())
        .collect();
    let n_failed = records.iter().filter(|r| r.prior == prior && r.metrics.is_none()).count();
    let n_flagged = records.iter().filter(|r| r.prior == prior && r.flagged).count();
    let pick = |f: fn(&MetricReport) -> f64| -> Vec<f64> {
        ok.iter().map(|r| f(r.metrics.as_ref().expect("ok record"))).collect()
    };
    let cpu: Vec<f64> = pick(|m| m.cpu_minutes);
    let cpu_summary = if cpu.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            cpu.iter().sum::<f64>() / cpu.len() as f64,
            cpu.iter().cloned().fold(f64::INFINITY, f64::min),
            cpu.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    BenchmarkSummaryRow {
        prior,
        n_fits: ok.len(),
        n_failed,
        n_flagged,
        envelope_95: mean_sd(&pick(|m| m.envelope_95)),
        envelope_80: mean_sd(&pick(|m| m.envelope_80)),
        mad: mean_sd(&pick(|m| m.mad)),
        mciw_95: mean_sd(&pick(|m| m.mciw_95)),
        mciw_80: mean_sd(&pick(|m| m.mciw_80)),
        cpu_minutes: cpu_summary,
    }
}
