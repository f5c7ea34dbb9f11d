//! End-to-end model fitting: wire the renewal posterior into the sampler,
//! decode draws, and summarize the reproduction-number path and scalar
//! parameters.

use crate::error::Result;
use crate::eval::RtPosteriorSummary;
use crate::model::RenewalModel;
use crate::sampler::{diagnostics, nuts_sample, DiagnosticReport, PosteriorDraws, SamplerConfig, Target};
use crate::timeseries::{weighted_quantile, CaseSeries};

impl Target for RenewalModel {
    fn dim(&self) -> usize {
        self.layout().dim()
    }

    fn logp_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        self.grad_log_posterior(position, grad)
    }

    fn constrained_dim(&self) -> usize {
        self.layout().constrained_dim()
    }

    fn constrain(&self, position: &[f64], out: &mut [f64]) {
        RenewalModel::constrain(self, position, out)
    }

    fn param_names(&self) -> Vec<String> {
        self.layout().constrained_names()
    }

    fn initial_position(&self, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        self.initial_point(rng)
    }
}

/// Median and central 95% interval for one scalar parameter.
#[derive(Debug, Clone)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug)]
pub struct FitResult {
    pub draws: PosteriorDraws,
    pub diagnostics: DiagnosticReport,
    pub rt: RtPosteriorSummary,
    pub params: Vec<ParamSummary>,
    /// Sum of per-chain sampling time, in minutes.
    pub cpu_minutes: f64,
}

/// Fit one model to one case series and summarize.
pub fn fit_model(cases: &CaseSeries, model: &RenewalModel, cfg: &SamplerConfig) -> Result<FitResult> {
    debug_assert_eq!(cases.len(), model.cases().len());
    let draws = nuts_sample(model, cfg)?;
    let report = diagnostics(&draws)?;
    let rt = rt_summary(model, &draws)?;
    let params = scalar_summaries(model, &draws)?;
    let cpu_minutes = draws.stats.iter().map(|s| s.elapsed_secs).sum::<f64>() / 60.0;
    Ok(FitResult { draws, diagnostics: report, rt, params, cpu_minutes })
}

/// Weekly posterior quantiles of R_t = exp(gamma_t).
pub fn rt_summary(model: &RenewalModel, draws: &PosteriorDraws) -> Result<RtPosteriorSummary> {
    let gamma = model.layout().constrained_gamma();
    let mut per_week = Vec::with_capacity(gamma.len());
    for p in gamma {
        let rt: Vec<f64> = draws.pooled(p).into_iter().map(f64::exp).collect();
        per_week.push(rt);
    }
    RtPosteriorSummary::from_rt_draws(&per_week)
}

/// Posterior draws of R at one week (1-based), pooled across chains.
pub fn rt_draws_at_week(model: &RenewalModel, draws: &PosteriorDraws, week: usize) -> Vec<f64> {
    let gamma = model.layout().constrained_gamma();
    let p = gamma.start + (week - 1);
    draws.pooled(p).into_iter().map(f64::exp).collect()
}

fn scalar_summaries(model: &RenewalModel, draws: &PosteriorDraws) -> Result<Vec<ParamSummary>> {
    let lay = model.layout();
    let scalar_count = 4 + lay.hyper_count();
    let start = lay.constrained_dim() - scalar_count;
    let names = lay.constrained_names();
    let mut out = Vec::with_capacity(scalar_count);
    for p in start..lay.constrained_dim() {
        let pooled = draws.pooled(p);
        out.push(ParamSummary {
            name: names[p].clone(),
            median: weighted_quantile(&pooled, 0.5)?,
            q025: weighted_quantile(&pooled, 0.025)?,
            q975: weighted_quantile(&pooled, 0.975)?,
        });
    }
    Ok(out)
}
