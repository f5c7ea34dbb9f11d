//! Split R-hat with rank normalization and rank-normalized bulk effective
//! sample size, with the convergence thresholds used throughout the
//! benchmarks: R-hat below 1.05 and ESS above 250.

use super::PosteriorDraws;
use crate::error::{Error, Result};
use statrs::distribution::{ContinuousCDF, Normal};

pub const RHAT_THRESHOLD: f64 = 1.05;
pub const ESS_THRESHOLD: f64 = 250.0;

#[derive(Debug, Clone)]
pub struct ParamDiagnostic {
    pub name: String,
    pub rhat: f64,
    pub ess_bulk: f64,
    /// Zero within- and between-chain variance; reported, never passed.
    pub degenerate: bool,
}

impl ParamDiagnostic {
    pub fn passes(&self) -> bool {
        !self.degenerate && self.rhat.is_finite() && self.rhat < RHAT_THRESHOLD
            && self.ess_bulk.is_finite()
            && self.ess_bulk > ESS_THRESHOLD
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosticReport {
    pub params: Vec<ParamDiagnostic>,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub divergences: usize,
    pub treedepth_hits: usize,
    /// True when any parameter violates the thresholds (or is degenerate).
    pub flagged: bool,
    pub failures: Vec<String>,
}

/// Compute per-parameter split R-hat and bulk ESS over retained draws.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<DiagnosticReport> {
    if draws.n_chains < 2 {
        return Err(Error::InvalidParameter("diagnostics need at least 2 chains".into()));
    }
    if draws.n_draws < 100 {
        return Err(Error::InvalidParameter(format!(
            "diagnostics need at least 100 retained iterations, got {}",
            draws.n_draws
        )));
    }
    let mut params = Vec::with_capacity(draws.dim);
    let mut max_rhat = f64::NEG_INFINITY;
    let mut min_ess = f64::INFINITY;
    let mut failures = Vec::new();
    for p in 0..draws.dim {
        let chains: Vec<Vec<f64>> =
            (0..draws.n_chains).map(|c| draws.param_chain(c, p)).collect();
        let d = param_diagnostics(&draws.names[p], &chains);
        if d.rhat.is_finite() {
            max_rhat = max_rhat.max(d.rhat);
        }
        if d.ess_bulk.is_finite() {
            min_ess = min_ess.min(d.ess_bulk);
        }
        if !d.passes() {
            failures.push(d.name.clone());
        }
        params.push(d);
    }
    let flagged = !failures.is_empty();
    Ok(DiagnosticReport {
        params,
        max_rhat,
        min_ess,
        divergences: draws.total_divergences(),
        treedepth_hits: draws.total_treedepth_hits(),
        flagged,
        failures,
    })
}

fn param_diagnostics(name: &str, chains: &[Vec<f64>]) -> ParamDiagnostic {
    let split = split_chains(chains);
    if has_zero_variance(&split) {
        return ParamDiagnostic {
            name: name.to_string(),
            rhat: f64::NAN,
            ess_bulk: f64::NAN,
            degenerate: true,
        };
    }
    let z = rank_normalize(&split);
    ParamDiagnostic {
        name: name.to_string(),
        rhat: rhat_of(&z),
        ess_bulk: ess_of(&z),
        degenerate: false,
    }
}

fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        // drop the middle draw of odd-length chains
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn has_zero_variance(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().all(|c| c.iter().all(|x| (x - first).abs() == 0.0))
}

/// Pooled average ranks mapped through the normal quantile function.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n_per = chains[0].len();
    let total = chains.len() * n_per;
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    for (ci, c) in chains.iter().enumerate() {
        for (di, &v) in c.iter().enumerate() {
            indexed.push((v, ci * n_per + di));
        }
    }
    indexed.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite draws"));
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j < total && indexed[j].0 == indexed[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for k in i..j {
            ranks[indexed[k].1] = avg;
        }
        i = j;
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let nf = total as f64;
    let mut out = vec![vec![0.0; n_per]; chains.len()];
    for (flat, r) in ranks.into_iter().enumerate() {
        let p = (r - 0.375) / (nf + 0.25);
        out[flat / n_per][flat % n_per] = std_normal.inverse_cdf(p);
    }
    out
}

fn chain_mean(c: &[f64]) -> f64 {
    c.iter().sum::<f64>() / c.len() as f64
}

fn rhat_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| chain_mean(c)).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, &cm)| c.iter().map(|x| (x - cm).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Effective sample size from combined per-chain autocorrelations with
/// Geyer's initial monotone positive pair sums.
fn ess_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| chain_mean(c)).collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, &cm)| c.iter().map(|x| (x - cm).powi(2)).sum::<f64>() / (nf - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m;
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if var_plus <= 0.0 {
        return f64::NAN;
    }

    let acov = |c: &[f64], cm: f64, lag: usize| -> f64 {
        let mut acc = 0.0;
        for t in 0..n - lag {
            acc += (c[t] - cm) * (c[t + lag] - cm);
        }
        acc / nf
    };

    // rho_hat at a lag, averaged over chains (Vehtari et al. combination)
    let rho_at = |lag: usize| -> f64 {
        let mean_acov = chains
            .iter()
            .zip(&means)
            .map(|(c, &cm)| acov(c, cm, lag))
            .sum::<f64>()
            / m;
        1.0 - (w - mean_acov) / var_plus
    };

    // Geyer pair sums P_k = rho_{2k} + rho_{2k+1}: truncate at the first
    // negative pair, enforce monotone non-increasing sums.
    let mut pair_prev = 1.0 + rho_at(1); // P_0 >= 0 since rho_1 >= -1
    let mut sum_pairs = pair_prev;
    let mut lag = 2usize;
    while lag + 1 < n {
        let pair = rho_at(lag) + rho_at(lag + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(pair_prev);
        sum_pairs += pair;
        pair_prev = pair;
        lag += 2;
    }
    let total = m * nf;
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / total.log10());
    (total / tau).min(total * total.log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::ChainStats;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn draws_from(chains: Vec<Vec<f64>>) -> PosteriorDraws {
        let n_chains = chains.len();
        let n_draws = chains[0].len();
        let mut flat = Vec::with_capacity(n_chains * n_draws);
        for c in &chains {
            flat.extend_from_slice(c);
        }
        PosteriorDraws {
            names: vec!["x".into()],
            n_chains,
            n_draws,
            dim: 1,
            draws: flat,
            stats: vec![
                ChainStats {
                    divergences: 0,
                    treedepth_hits: 0,
                    step_size: 0.1,
                    inv_mass_diag: vec![1.0],
                    accept_mean: 0.9,
                    energy_error_mean: 0.05,
                    elapsed_secs: 0.0,
                };
                n_chains
            ],
        }
    }

    #[test]
    fn iid_normal_chains_look_converged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let report = diagnostics(&draws_from(chains)).unwrap();
        let d = &report.params[0];
        assert!((d.rhat - 1.0).abs() < 0.01, "rhat {}", d.rhat);
        let total = 4000.0;
        assert!(
            (d.ess_bulk - total).abs() < 0.2 * total,
            "ess {} vs {total}",
            d.ess_bulk
        );
        assert!(!report.flagged);
    }

    #[test]
    fn constant_chains_are_degenerate_not_passing() {
        let chains = vec![vec![2.0; 400], vec![2.0; 400]];
        let report = diagnostics(&draws_from(chains)).unwrap();
        assert!(report.params[0].degenerate);
        assert!(report.flagged);
    }

    #[test]
    fn trending_chain_halves_fail_rhat() {
        // one chain duplicated, with a strong linear trend: the split halves
        // sit at different levels, which split R-hat must catch.
        let trend: Vec<f64> = (0..600).map(|t| t as f64 * 0.01).collect();
        let chains = vec![trend.clone(), trend];
        let report = diagnostics(&draws_from(chains)).unwrap();
        assert!(report.params[0].rhat > 1.05, "rhat {}", report.params[0].rhat);
        assert!(report.flagged);
    }

    #[test]
    fn offset_chains_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..500).map(|_| rng.random::<f64>() + 5.0).collect();
        let report = diagnostics(&draws_from(vec![a, b])).unwrap();
        assert!(report.params[0].rhat > 1.5);
    }

    #[test]
    fn preconditions_enforced() {
        let chains = vec![vec![0.0; 50], vec![0.0; 50]];
        assert!(diagnostics(&draws_from(chains)).is_err());
    }

    #[test]
    fn autocorrelated_chains_have_reduced_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut make = |rho: f64| -> Vec<f64> {
            let mut x = 0.0;
            (0..2000)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x = rho * x + (1.0 - rho * rho).sqrt() * e;
                    x
                })
                .collect()
        };
        let chains = vec![make(0.9), make(0.9), make(0.9), make(0.9)];
        let report = diagnostics(&draws_from(chains)).unwrap();
        let ess = report.params[0].ess_bulk;
        // AR(1) with rho=0.9 has tau ~ (1+rho)/(1-rho) = 19
        let total = 8000.0;
        assert!(ess < total / 8.0, "ess {ess} too high");
        assert!(ess > total / 80.0, "ess {ess} too low");
    }
}
