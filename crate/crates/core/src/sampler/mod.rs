//! Hamiltonian Monte Carlo with the no-U-turn criterion, warmup adaptation,
//! and chain diagnostics.

mod diagnostics;
mod nuts;

pub use diagnostics::{diagnostics, DiagnosticReport, ParamDiagnostic, ESS_THRESHOLD, RHAT_THRESHOLD};

use crate::error::{Error, Result};
use crate::seeds::sub_seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// A differentiable unnormalized log-density the sampler can target.
///
/// `logp_grad` returns -inf to signal a rejected (out-of-support or
/// numerically failed) point. `constrain` maps a raw position to the
/// constrained-scale report vector that ends up in [`PosteriorDraws`].
pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn logp_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;

    fn constrained_dim(&self) -> usize {
        self.dim()
    }

    fn constrain(&self, position: &[f64], out: &mut [f64]) {
        out.copy_from_slice(position);
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.constrained_dim()).map(|i| format!("x[{i}]")).collect()
    }

    fn initial_position(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Warmup iterations discarded from each chain.
    pub warmup: usize,
    /// Total iterations per chain, warmup included.
    pub iters: usize,
    pub seed: u64,
    pub max_treedepth: usize,
    pub target_accept: f64,
    /// Hamiltonian error that flags a divergent transition.
    pub divergence_threshold: f64,
    /// Worker threads for parallel chains; 0 uses the rayon default.
    pub jobs: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 2000,
            iters: 6000,
            seed: 1,
            max_treedepth: 10,
            target_accept: 0.8,
            divergence_threshold: 1000.0,
            jobs: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 1 {
            return Err(Error::Config("need at least one chain".into()));
        }
        if self.warmup >= self.iters {
            return Err(Error::Config(format!(
                "warmup {} must be < total iterations {}",
                self.warmup, self.iters
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must be in (0,1)".into()));
        }
        if self.max_treedepth == 0 || self.max_treedepth > 20 {
            return Err(Error::Config("max_treedepth must be in 1..=20".into()));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iters - self.warmup
    }
}

/// Per-chain sampling statistics.
#[derive(Debug, Clone)]
pub struct ChainStats {
    pub divergences: usize,
    pub treedepth_hits: usize,
    pub step_size: f64,
    pub inv_mass_diag: Vec<f64>,
    pub accept_mean: f64,
    /// Mean |H(proposal) - H(start)| over post-warmup moves.
    pub energy_error_mean: f64,
    pub elapsed_secs: f64,
}

/// Retained draws on the constrained scale, chains kept separate.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub n_chains: usize,
    pub n_draws: usize,
    pub dim: usize,
    draws: Vec<f64>,
    pub stats: Vec<ChainStats>,
}

impl PosteriorDraws {
    pub fn value(&self, chain: usize, draw: usize, param: usize) -> f64 {
        self.draws[(chain * self.n_draws + draw) * self.dim + param]
    }

    /// One parameter's trace within one chain.
    pub fn param_chain(&self, chain: usize, param: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.value(chain, d, param)).collect()
    }

    /// One parameter's draws pooled across chains.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_chains * self.n_draws);
        for c in 0..self.n_chains {
            for d in 0..self.n_draws {
                out.push(self.value(c, d, param));
            }
        }
        out
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn total_divergences(&self) -> usize {
        self.stats.iter().map(|s| s.divergences).sum()
    }

    pub fn total_treedepth_hits(&self) -> usize {
        self.stats.iter().map(|s| s.treedepth_hits).sum()
    }
}

/// Run the no-U-turn sampler. Chains execute independently (in parallel when
/// `jobs` allows) with per-chain seeds derived from the master seed, so
/// results are reproducible regardless of scheduling.
pub fn nuts_sample<T: Target>(target: &T, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let names = target.param_names();
    let run = || -> Vec<Result<(Vec<f64>, ChainStats)>> {
        (0..cfg.chains)
            .into_par_iter()
            .map(|chain| nuts::run_chain(target, cfg, sub_seed(cfg.seed, "chain", chain as u64)))
            .collect()
    };
    let results = if cfg.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidState(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    };

    let mut draws = Vec::with_capacity(cfg.chains * cfg.retained() * target.constrained_dim());
    let mut stats = Vec::with_capacity(cfg.chains);
    let mut init_failures = Vec::new();
    for (chain, r) in results.into_iter().enumerate() {
        match r {
            Ok((chain_draws, chain_stats)) => {
                draws.extend_from_slice(&chain_draws);
                stats.push(chain_stats);
            }
            Err(e) => init_failures.push(format!("chain {chain}: {e}")),
        }
    }
    if !init_failures.is_empty() {
        return Err(Error::InitializationFailure(init_failures.join("; ")));
    }
    Ok(PosteriorDraws {
        names,
        n_chains: cfg.chains,
        n_draws: cfg.retained(),
        dim: target.constrained_dim(),
        draws,
        stats,
    })
}
