//! The full posterior kernel: observation and incidence likelihoods, the
//! chosen smoothing prior, hyperpriors, and the unconstrained-scale
//! change-of-variables, with analytic gradients for Hamiltonian sampling.

use crate::dist::{
    exponential_logpdf, exponential_mean_logpdf, gamma_logpdf, normal_logpdf, truncnormal_lower0_log_normalizer, LN_2PI,
};
use crate::error::{Error, Result};
use crate::priors::{
    hsgp_basis, ibm_logprior_grad, matern32_sqrt_spectral, matern32_sqrt_spectral_dell,
    ou_logprior_grad, rw1_logprior_grad, rw2_logprior_grad, HsgpBasis, PriorHyper, PriorKind,
};
use crate::renewal::{LatentIncidence, NuisanceParams};
use crate::timeseries::{CaseSeries, DiscretizedPmf, PmfKind};
use statrs::function::gamma::{digamma, ln_gamma};

/// A (location, scale) log-normal hyperprior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalHyper {
    pub location: f64,
    pub scale: f64,
}

/// A normal hyperprior truncated to (0, inf).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormalHyper {
    pub location: f64,
    pub scale: f64,
}

/// A (shape, rate) gamma hyperprior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaHyper {
    pub shape: f64,
    pub rate: f64,
}

/// Hyperprior settings on the constrained scale. Defaults reproduce the
/// simulation-study table; every entry is overridable from config.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPriorSpec {
    pub rho: LogNormalHyper,
    pub kappa: TruncNormalHyper,
    pub nu: LogNormalHyper,
    /// Rate of the exponential hyperprior on the seeding mean.
    pub lambda_rate: f64,
    /// Initial-state prior for the Markov priors (log R_1).
    pub gamma1_location: f64,
    pub gamma1_scale: f64,
    /// Initial derivative location (IBM).
    pub gamma1_prime_location: f64,
    /// Step-scale prior; kind-dependent default.
    pub sigma: LogNormalHyper,
    /// Mean-reversion prior rate (OU).
    pub theta_rate: f64,
    /// Kernel magnitude prior (HSGP).
    pub alpha: LogNormalHyper,
    /// Length-scale prior (HSGP).
    pub ell: GammaHyper,
}

impl HyperPriorSpec {
    pub fn defaults_for(kind: PriorKind) -> Self {
        let sigma = match kind {
            PriorKind::Rw1 => LogNormalHyper { location: -0.6, scale: 0.6 },
            PriorKind::Ou => LogNormalHyper { location: -2.6, scale: 0.6 },
            PriorKind::Rw2 => LogNormalHyper { location: -2.0, scale: 0.6 },
            PriorKind::Ibm => LogNormalHyper { location: -0.5, scale: 0.6 },
            // unused by HSGP (alpha plays that role); keep the rw1 default
            PriorKind::Hsgp => LogNormalHyper { location: -0.6, scale: 0.6 },
        };
        Self {
            rho: LogNormalHyper { location: -3.0, scale: 0.3 },
            kappa: TruncNormalHyper { location: 70.0, scale: 80.0 },
            nu: LogNormalHyper { location: -2.0, scale: 0.7 },
            lambda_rate: 0.3,
            gamma1_location: 0.0,
            gamma1_scale: 0.5,
            gamma1_prime_location: 0.0,
            sigma,
            theta_rate: 1.0,
            alpha: LogNormalHyper { location: -0.6, scale: 0.6 },
            ell: GammaHyper { shape: 100.0, rate: 20.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [
            self.rho.scale,
            self.kappa.scale,
            self.nu.scale,
            self.lambda_rate,
            self.gamma1_scale,
            self.sigma.scale,
            self.theta_rate,
            self.alpha.scale,
            self.ell.shape,
            self.ell.rate,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("hyperprior scales must be positive and finite".into()));
        }
        Ok(())
    }

    /// Prior mean of the length scale, used once to build the HSGP basis.
    pub fn ell_prior_mean(&self) -> f64 {
        self.ell.shape / self.ell.rate
    }
}

/// Everything that determines the posterior density for a case series.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub prior_kind: PriorKind,
    pub hyper: HyperPriorSpec,
    pub gen_pmf: DiscretizedPmf,
    pub delay_pmf: DiscretizedPmf,
    /// Seeding length n; defaults to the generation-pmf max lag.
    pub seeding_len: Option<usize>,
}

impl ModelSpec {
    pub fn new(kind: PriorKind, gen_pmf: DiscretizedPmf, delay_pmf: DiscretizedPmf) -> Result<Self> {
        if gen_pmf.kind() != PmfKind::Generation {
            return Err(Error::Config("gen_pmf must have kind generation".into()));
        }
        if delay_pmf.kind() != PmfKind::Delay {
            return Err(Error::Config("delay_pmf must have kind delay".into()));
        }
        Ok(Self {
            prior_kind: kind,
            hyper: HyperPriorSpec::defaults_for(kind),
            gen_pmf,
            delay_pmf,
            seeding_len: None,
        })
    }

    pub fn resolved_seeding_len(&self) -> usize {
        self.seeding_len.unwrap_or_else(|| self.gen_pmf.max_lag())
    }
}

/// Named views into the flat unconstrained parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub kind: PriorKind,
    pub t_len: usize,
    /// Number of seeded incidence values (n + 1).
    pub seed_count: usize,
    /// Latent block length: T for the Markov priors, M for HSGP.
    pub latent_len: usize,
    pub hsgp_m: usize,
}

impl ParamLayout {
    fn new(kind: PriorKind, t_len: usize, seed_count: usize, hsgp_m: usize) -> Self {
        let latent_len = if kind == PriorKind::Hsgp { hsgp_m } else { t_len };
        Self { kind, t_len, seed_count, latent_len, hsgp_m }
    }

    pub fn latent(&self) -> std::ops::Range<usize> {
        0..self.latent_len
    }

    pub fn gamma_prime(&self) -> Option<std::ops::Range<usize>> {
        (self.kind == PriorKind::Ibm).then(|| self.latent_len..self.latent_len + self.t_len)
    }

    fn after_latent(&self) -> usize {
        self.latent_len + if self.kind == PriorKind::Ibm { self.t_len } else { 0 }
    }

    pub fn log_i_seed(&self) -> std::ops::Range<usize> {
        let s = self.after_latent();
        s..s + self.seed_count
    }

    pub fn log_i_obs(&self) -> std::ops::Range<usize> {
        let s = self.after_latent() + self.seed_count;
        s..s + self.t_len
    }

    pub fn log_rho(&self) -> usize {
        self.after_latent() + self.seed_count + self.t_len
    }

    pub fn log_kappa(&self) -> usize {
        self.log_rho() + 1
    }

    pub fn log_nu(&self) -> usize {
        self.log_rho() + 2
    }

    pub fn log_lambda(&self) -> usize {
        self.log_rho() + 3
    }

    /// Unconstrained slots of the prior's own hyperparameters:
    /// [log sigma], [log sigma, log theta], or [log alpha, log ell].
    pub fn hyper_slots(&self) -> std::ops::Range<usize> {
        let s = self.log_rho() + 4;
        s..s + self.hyper_count()
    }

    pub fn hyper_count(&self) -> usize {
        match self.kind {
            PriorKind::Rw1 | PriorKind::Rw2 | PriorKind::Ibm => 1,
            PriorKind::Ou | PriorKind::Hsgp => 2,
        }
    }

    pub fn dim(&self) -> usize {
        self.hyper_slots().end
    }

    /// Dimension of the constrained report vector; HSGP appends the derived
    /// log-R path after the whitened coefficients.
    pub fn constrained_dim(&self) -> usize {
        self.dim() + if self.kind == PriorKind::Hsgp { self.t_len } else { 0 }
    }

    /// Index range of the log-R path within the constrained report.
    pub fn constrained_gamma(&self) -> std::ops::Range<usize> {
        if self.kind == PriorKind::Hsgp {
            self.latent_len..self.latent_len + self.t_len
        } else {
            0..self.t_len
        }
    }

    pub fn constrained_names(&self) -> Vec<String> {
        let n = self.seed_count - 1;
        let mut names = Vec::with_capacity(self.constrained_dim());
        if self.kind == PriorKind::Hsgp {
            for j in 1..=self.hsgp_m {
                names.push(format!("z[{j}]"));
            }
        }
        for t in 1..=self.t_len {
            names.push(format!("gamma[{t}]"));
        }
        if self.kind == PriorKind::Ibm {
            for t in 1..=self.t_len {
                names.push(format!("gamma_prime[{t}]"));
            }
        }
        for j in 0..self.seed_count {
            names.push(format!("I[{}]", j as i64 - n as i64));
        }
        for t in 1..=self.t_len {
            names.push(format!("I[{t}]"));
        }
        names.push("rho".into());
        names.push("kappa".into());
        names.push("nu".into());
        names.push("lambda".into());
        match self.kind {
            PriorKind::Rw1 | PriorKind::Rw2 | PriorKind::Ibm => names.push("sigma".into()),
            PriorKind::Ou => {
                names.push("sigma".into());
                names.push("theta".into());
            }
            PriorKind::Hsgp => {
                names.push("alpha".into());
                names.push("ell".into());
            }
        }
        debug_assert_eq!(names.len(), self.constrained_dim());
        names
    }
}

/// A decoded, constrained-scale view of one parameter vector.
#[derive(Debug, Clone)]
pub struct ConstrainedPoint {
    pub gamma: Vec<f64>,
    pub gamma_prime: Option<Vec<f64>>,
    pub hsgp_z: Option<Vec<f64>>,
    pub incidence: LatentIncidence,
    pub nuisance: NuisanceParams,
    pub prior: PriorHyper,
}

/// The assembled differentiable posterior kernel for one case series.
#[derive(Debug, Clone)]
pub struct RenewalModel {
    cases: CaseSeries,
    spec: ModelSpec,
    layout: ParamLayout,
    basis: Option<HsgpBasis>,
    kappa_trunc_logz: f64,
    lgamma_obs: Vec<f64>,
}

impl RenewalModel {
    pub fn new(cases: CaseSeries, spec: ModelSpec) -> Result<Self> {
        spec.hyper.validate()?;
        let n = spec.resolved_seeding_len();
        if n < spec.gen_pmf.max_lag() {
            return Err(Error::Config(format!(
                "seeding length {n} must cover the generation pmf max lag {}",
                spec.gen_pmf.max_lag()
            )));
        }
        let t_len = cases.len();
        if spec.prior_kind == PriorKind::Rw2 && t_len < 3 {
            return Err(Error::Config("rw2 needs at least 3 weeks".into()));
        }
        let basis = if spec.prior_kind == PriorKind::Hsgp {
            Some(hsgp_basis(t_len, spec.hyper.ell_prior_mean())?)
        } else {
            None
        };
        let hsgp_m = basis.as_ref().map_or(0, |b| b.m);
        let layout = ParamLayout::new(spec.prior_kind, t_len, n + 1, hsgp_m);
        let kappa_trunc_logz =
            truncnormal_lower0_log_normalizer(spec.hyper.kappa.location, spec.hyper.kappa.scale);
        let lgamma_obs = cases.counts().iter().map(|&o| ln_gamma(o as f64 + 1.0)).collect();
        Ok(Self { cases, spec, layout, basis, kappa_trunc_logz, lgamma_obs })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn cases(&self) -> &CaseSeries {
        &self.cases
    }

    pub fn basis(&self) -> Option<&HsgpBasis> {
        self.basis.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Log posterior kernel at an unconstrained point; -inf when the point
    /// decodes outside the support or the density is not finite.
    pub fn log_posterior(&self, u: &[f64]) -> f64 {
        self.eval(u, None)
    }

    /// Value and exact gradient of the log posterior kernel. `grad` is
    /// overwritten; on a non-finite evaluation the value is -inf and the
    /// gradient contents are unspecified.
    pub fn grad_log_posterior(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        self.eval(u, Some(grad))
    }

    /// Decode an unconstrained vector into constrained-scale parameters.
    pub fn decode(&self, u: &[f64]) -> Result<ConstrainedPoint> {
        if u.len() != self.layout.dim() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                self.layout.dim(),
                u.len()
            )));
        }
        let lay = &self.layout;
        let (gamma, hsgp_z) = match self.spec.prior_kind {
            PriorKind::Hsgp => {
                let z = u[lay.latent()].to_vec();
                let basis = self.basis.as_ref().expect("hsgp basis");
                let (alpha, ell) = self.hsgp_params(u);
                (basis.gamma_from_z(&z, alpha, ell), Some(z))
            }
            _ => (u[lay.latent()].to_vec(), None),
        };
        let gamma_prime = lay.gamma_prime().map(|r| u[r].to_vec());
        let seeded: Vec<f64> = u[lay.log_i_seed()].iter().map(|x| x.exp()).collect();
        let observed: Vec<f64> = u[lay.log_i_obs()].iter().map(|x| x.exp()).collect();
        let incidence = LatentIncidence::new(seeded, observed)?;
        let nuisance = NuisanceParams {
            rho: u[lay.log_rho()].exp(),
            kappa: u[lay.log_kappa()].exp(),
            nu: u[lay.log_nu()].exp(),
            lambda: u[lay.log_lambda()].exp(),
        };
        let prior = self.prior_hyper_at(u);
        Ok(ConstrainedPoint { gamma, gamma_prime, hsgp_z, incidence, nuisance, prior })
    }

    /// Inverse of [`decode`]: rebuild the unconstrained vector.
    pub fn encode(&self, p: &ConstrainedPoint) -> Result<Vec<f64>> {
        let lay = &self.layout;
        let mut u = vec![0.0; lay.dim()];
        match self.spec.prior_kind {
            PriorKind::Hsgp => {
                let z = p
                    .hsgp_z
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("hsgp point needs z".into()))?;
                u[lay.latent()].copy_from_slice(z);
            }
            _ => u[lay.latent()].copy_from_slice(&p.gamma),
        }
        if let Some(r) = lay.gamma_prime() {
            let gp = p
                .gamma_prime
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("ibm point needs gamma_prime".into()))?;
            u[r].copy_from_slice(gp);
        }
        for (slot, v) in lay.log_i_seed().zip(p.incidence.seeded()) {
            u[slot] = v.ln();
        }
        for (slot, v) in lay.log_i_obs().zip(p.incidence.observed()) {
            u[slot] = v.ln();
        }
        u[lay.log_rho()] = p.nuisance.rho.ln();
        u[lay.log_kappa()] = p.nuisance.kappa.ln();
        u[lay.log_nu()] = p.nuisance.nu.ln();
        u[lay.log_lambda()] = p.nuisance.lambda.ln();
        let slots = lay.hyper_slots();
        match p.prior {
            PriorHyper::Rw1 { sigma, .. } | PriorHyper::Rw2 { sigma, .. } | PriorHyper::Ibm { sigma, .. } => {
                u[slots.start] = sigma.ln();
            }
            PriorHyper::Ou { sigma, theta, .. } => {
                u[slots.start] = sigma.ln();
                u[slots.start + 1] = theta.ln();
            }
            PriorHyper::Hsgp { alpha, ell } => {
                u[slots.start] = alpha.ln();
                u[slots.start + 1] = ell.ln();
            }
        }
        Ok(u)
    }

    /// Constrained report vector (identity on path coordinates, exp on
    /// positives; HSGP appends the derived log-R path).
    pub fn constrain(&self, u: &[f64], out: &mut [f64]) {
        let lay = &self.layout;
        debug_assert_eq!(out.len(), lay.constrained_dim());
        let mut k = 0;
        for i in lay.latent() {
            out[k] = u[i];
            k += 1;
        }
        if self.spec.prior_kind == PriorKind::Hsgp {
            let basis = self.basis.as_ref().expect("hsgp basis");
            let (alpha, ell) = self.hsgp_params(u);
            let gamma = basis.gamma_from_z(&u[lay.latent()], alpha, ell);
            out[k..k + gamma.len()].copy_from_slice(&gamma);
            k += gamma.len();
        }
        if let Some(r) = lay.gamma_prime() {
            for i in r {
                out[k] = u[i];
                k += 1;
            }
        }
        for i in lay.log_i_seed().chain(lay.log_i_obs()) {
            out[k] = u[i].exp();
            k += 1;
        }
        for i in [lay.log_rho(), lay.log_kappa(), lay.log_nu(), lay.log_lambda()] {
            out[k] = u[i].exp();
            k += 1;
        }
        for i in lay.hyper_slots() {
            out[k] = u[i].exp();
            k += 1;
        }
        debug_assert_eq!(k, lay.constrained_dim());
    }

    fn hsgp_params(&self, u: &[f64]) -> (f64, f64) {
        let slots = self.layout.hyper_slots();
        (u[slots.start].exp(), u[slots.start + 1].exp())
    }

    fn prior_hyper_at(&self, u: &[f64]) -> PriorHyper {
        let h = &self.spec.hyper;
        let slots = self.layout.hyper_slots();
        match self.spec.prior_kind {
            PriorKind::Rw1 => PriorHyper::Rw1 {
                sigma: u[slots.start].exp(),
                mu1: h.gamma1_location,
                sigma1: h.gamma1_scale,
            },
            PriorKind::Ou => PriorHyper::Ou {
                sigma: u[slots.start].exp(),
                theta: u[slots.start + 1].exp(),
                mu1: h.gamma1_location,
                sigma1: h.gamma1_scale,
            },
            PriorKind::Rw2 => PriorHyper::Rw2 {
                sigma: u[slots.start].exp(),
                mu1: h.gamma1_location,
                sigma1: h.gamma1_scale,
            },
            PriorKind::Ibm => PriorHyper::Ibm {
                sigma: u[slots.start].exp(),
                mu1: h.gamma1_location,
                sigma1: h.gamma1_scale,
                mu1_prime: h.gamma1_prime_location,
            },
            PriorKind::Hsgp => PriorHyper::Hsgp {
                alpha: u[slots.start].exp(),
                ell: u[slots.start + 1].exp(),
            },
        }
    }

    /// Heuristic starting point: path coordinates at zero, latent incidence
    /// at smoothed cases over the prior-mean ascertainment, remaining
    /// scalars uniform in (-2, 2) on the unconstrained scale.
    pub fn initial_point<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        let lay = &self.layout;
        let mut u = vec![0.0; lay.dim()];
        let h = &self.spec.hyper;
        let rho_mean = (h.rho.location + 0.5 * h.rho.scale * h.rho.scale).exp();
        let counts = self.cases.counts();
        let smooth = |t: usize| -> f64 {
            let lo = t.saturating_sub(1);
            let hi = (t + 1).min(counts.len() - 1);
            let mut acc = 0.0;
            for c in &counts[lo..=hi] {
                acc += *c as f64;
            }
            (acc / (hi - lo + 1) as f64).max(0.5)
        };
        for (k, slot) in lay.log_i_obs().enumerate() {
            u[slot] = (smooth(k) / rho_mean).ln();
        }
        let first = (smooth(0) / rho_mean).ln();
        for slot in lay.log_i_seed() {
            u[slot] = first;
        }
        for slot in [lay.log_rho(), lay.log_kappa(), lay.log_nu(), lay.log_lambda()] {
            u[slot] = rng.random_range(-2.0..2.0);
        }
        for slot in lay.hyper_slots() {
            u[slot] = rng.random_range(-2.0..2.0);
        }
        u
    }

    // -----------------------------------------------------------------------
    // The density itself. One pass computes the value and, when requested,
    // accumulates d logp / d u analytically.
    // -----------------------------------------------------------------------
    fn eval(&self, u: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let lay = &self.layout;
        debug_assert_eq!(u.len(), lay.dim());
        let h = &self.spec.hyper;
        let t_len = lay.t_len;
        let n = lay.seed_count - 1;

        if u.iter().any(|x| !x.is_finite()) {
            return f64::NEG_INFINITY;
        }
        // Positivity transforms; overflow maps to rejection.
        let exp_or_bail = |x: f64| -> Option<f64> {
            if x > 700.0 {
                None
            } else {
                Some(x.exp())
            }
        };
        macro_rules! bail_exp {
            ($x:expr) => {
                match exp_or_bail($x) {
                    Some(v) => v,
                    None => return f64::NEG_INFINITY,
                }
            };
        }

        let rho = bail_exp!(u[lay.log_rho()]);
        let kappa = bail_exp!(u[lay.log_kappa()]);
        let nu = bail_exp!(u[lay.log_nu()]);
        let lambda = bail_exp!(u[lay.log_lambda()]);

        // incidence on the constrained scale, indexed j + n for j in -n..=T
        let mut inc = Vec::with_capacity(n + 1 + t_len);
        for i in lay.log_i_seed().chain(lay.log_i_obs()) {
            inc.push(bail_exp!(u[i]));
        }

        let slots = lay.hyper_slots();
        let mut lp = 0.0;

        // --- Jacobian of the log transforms: sum of the unconstrained coords.
        let mut jac_slots: Vec<usize> = lay.log_i_seed().chain(lay.log_i_obs()).collect();
        jac_slots.extend([lay.log_rho(), lay.log_kappa(), lay.log_nu(), lay.log_lambda()]);
        jac_slots.extend(slots.clone());
        for &i in &jac_slots {
            lp += u[i];
            if let Some(g) = grad.as_deref_mut() {
                g[i] += 1.0;
            }
        }

        // --- Hyperpriors on the constrained scale.
        {
            // log-normals: rho, nu
            for (idx, hyp) in [(lay.log_rho(), &h.rho), (lay.log_nu(), &h.nu)] {
                lp += normal_logpdf(u[idx], hyp.location, hyp.scale) - u[idx];
                if let Some(g) = grad.as_deref_mut() {
                    g[idx] += -1.0 - (u[idx] - hyp.location) / (hyp.scale * hyp.scale);
                }
            }
            // truncated normal kappa
            lp += normal_logpdf(kappa, h.kappa.location, h.kappa.scale) - self.kappa_trunc_logz;
            if let Some(g) = grad.as_deref_mut() {
                g[lay.log_kappa()] +=
                    -(kappa - h.kappa.location) / (h.kappa.scale * h.kappa.scale) * kappa;
            }
            // exponential lambda
            lp += exponential_logpdf(lambda, h.lambda_rate);
            if let Some(g) = grad.as_deref_mut() {
                g[lay.log_lambda()] += -h.lambda_rate * lambda;
            }
            // prior-specific hyperparameters
            match self.spec.prior_kind {
                PriorKind::Rw1 | PriorKind::Rw2 | PriorKind::Ibm => {
                    let us = u[slots.start];
                    lp += normal_logpdf(us, h.sigma.location, h.sigma.scale) - us;
                    if let Some(g) = grad.as_deref_mut() {
                        g[slots.start] += -1.0 - (us - h.sigma.location) / (h.sigma.scale * h.sigma.scale);
                    }
                }
                PriorKind::Ou => {
                    let us = u[slots.start];
                    lp += normal_logpdf(us, h.sigma.location, h.sigma.scale) - us;
                    let theta = bail_exp!(u[slots.start + 1]);
                    lp += exponential_logpdf(theta, h.theta_rate);
                    if let Some(g) = grad.as_deref_mut() {
                        g[slots.start] += -1.0 - (us - h.sigma.location) / (h.sigma.scale * h.sigma.scale);
                        g[slots.start + 1] += -h.theta_rate * theta;
                    }
                }
                PriorKind::Hsgp => {
                    let ua = u[slots.start];
                    lp += normal_logpdf(ua, h.alpha.location, h.alpha.scale) - ua;
                    let ell = bail_exp!(u[slots.start + 1]);
                    lp += gamma_logpdf(ell, h.ell.shape, h.ell.rate);
                    if let Some(g) = grad.as_deref_mut() {
                        g[slots.start] += -1.0 - (ua - h.alpha.location) / (h.alpha.scale * h.alpha.scale);
                        g[slots.start + 1] += (h.ell.shape - 1.0) - h.ell.rate * ell;
                    }
                }
            }
        }

        // --- Decode the latent path.
        let (gamma, hsgp_scales): (Vec<f64>, Option<Vec<f64>>) = match self.spec.prior_kind {
            PriorKind::Hsgp => {
                let basis = self.basis.as_ref().expect("hsgp basis");
                let (alpha, ell) = self.hsgp_params(u);
                let scales: Vec<f64> = basis
                    .sqrt_eigs
                    .iter()
                    .map(|&om| matern32_sqrt_spectral(om, alpha, ell))
                    .collect();
                let z = &u[lay.latent()];
                let mut gm = vec![0.0; t_len];
                for (t, gm_t) in gm.iter_mut().enumerate() {
                    let row = &basis.phi[t * basis.m..(t + 1) * basis.m];
                    let mut acc = 0.0;
                    for j in 0..basis.m {
                        acc += row[j] * scales[j] * z[j];
                    }
                    *gm_t = acc;
                }
                (gm, Some(scales))
            }
            _ => (u[lay.latent()].to_vec(), None),
        };

        // Gradient accumulators on the constrained scale.
        let want_grad = grad.is_some();
        let mut g_gamma = vec![0.0; if want_grad { t_len } else { 0 }];
        let mut g_inc = vec![0.0; if want_grad { inc.len() } else { 0 }];
        let (mut g_rho, mut g_kappa, mut g_nu, mut g_lambda) = (0.0, 0.0, 0.0, 0.0);

        // --- Seeds: exponential with mean lambda.
        for k in 0..=n {
            lp += exponential_mean_logpdf(inc[k], lambda);
            if want_grad {
                g_inc[k] += -1.0 / lambda;
                g_lambda += -1.0 / lambda + inc[k] / (lambda * lambda);
            }
        }

        // --- Renewal incidence: I_t ~ Gamma(R_t * Lambda_t * nu, nu).
        let g_probs = self.spec.gen_pmf.probs();
        let log_nu = nu.ln();
        for t in 1..=t_len {
            let mut load = 0.0;
            let k_hi = g_probs.len().min(t + n + 1);
            for (k, &p) in g_probs.iter().enumerate().take(k_hi).skip(1) {
                load += p * inc[t + n - k];
            }
            if !(load > 0.0) {
                return f64::NEG_INFINITY;
            }
            let r_t = gamma[t - 1].exp();
            let shape = r_t * load * nu;
            let x = inc[t + n];
            lp += shape * log_nu - ln_gamma(shape) + (shape - 1.0) * x.ln() - nu * x;
            if want_grad {
                let dshape = log_nu - digamma(shape) + x.ln();
                g_gamma[t - 1] += dshape * shape;
                let dload = dshape * r_t * nu;
                for (k, &p) in g_probs.iter().enumerate().take(k_hi).skip(1) {
                    g_inc[t + n - k] += dload * p;
                }
                g_nu += shape / nu + dshape * r_t * load - x;
                g_inc[t + n] += (shape - 1.0) / x - nu;
            }
        }

        // --- Observation model: O_t ~ NegBinom(rho * D_t, kappa).
        let d_probs = self.spec.delay_pmf.probs();
        let counts = self.cases.counts();
        let log_kappa_v = kappa.ln();
        let lg_kappa = ln_gamma(kappa);
        let dig_kappa = if want_grad { digamma(kappa) } else { 0.0 };
        for t in 1..=t_len {
            let mut dload = 0.0;
            let k_hi = d_probs.len().min(t + n + 1);
            for (k, &p) in d_probs.iter().enumerate().take(k_hi) {
                dload += p * inc[t + n - k];
            }
            let mean = rho * dload;
            if !(mean > 0.0) {
                return f64::NEG_INFINITY;
            }
            let o = counts[t - 1] as f64;
            let denom = (kappa + mean).ln();
            lp += ln_gamma(o + kappa) - lg_kappa - self.lgamma_obs[t - 1]
                + kappa * (log_kappa_v - denom)
                + o * (mean.ln() - denom);
            if want_grad {
                let dmean = o / mean - (o + kappa) / (kappa + mean);
                g_rho += dmean * dload;
                let dd = dmean * rho;
                for (k, &p) in d_probs.iter().enumerate().take(k_hi) {
                    g_inc[t + n - k] += dd * p;
                }
                g_kappa += digamma(o + kappa) - dig_kappa + log_kappa_v + 1.0
                    - denom
                    - (kappa + o) / (kappa + mean);
            }
        }

        // --- Smoothing prior on the path.
        let prior = self.prior_hyper_at(u);
        let mut g_sigma = 0.0;
        let mut g_theta = 0.0;
        match (&prior, self.spec.prior_kind) {
            (PriorHyper::Rw1 { .. }, _) => {
                lp += rw1_logprior_grad(
                    &gamma,
                    &prior,
                    want_grad.then_some(&mut g_gamma[..]),
                    want_grad.then_some(&mut g_sigma),
                );
            }
            (PriorHyper::Ou { .. }, _) => {
                lp += ou_logprior_grad(
                    &gamma,
                    &prior,
                    want_grad.then_some(&mut g_gamma[..]),
                    want_grad.then_some(&mut g_sigma),
                    want_grad.then_some(&mut g_theta),
                );
            }
            (PriorHyper::Rw2 { .. }, _) => {
                lp += rw2_logprior_grad(
                    &gamma,
                    &prior,
                    want_grad.then_some(&mut g_gamma[..]),
                    want_grad.then_some(&mut g_sigma),
                );
            }
            (PriorHyper::Ibm { .. }, _) => {
                let gp_range = lay.gamma_prime().expect("ibm layout");
                let gp = &u[gp_range];
                let mut g_gp = vec![0.0; if want_grad { t_len } else { 0 }];
                lp += ibm_logprior_grad(
                    &gamma,
                    gp,
                    &prior,
                    want_grad.then_some(&mut g_gamma[..]),
                    want_grad.then_some(&mut g_gp[..]),
                    want_grad.then_some(&mut g_sigma),
                );
                if let Some(g) = grad.as_deref_mut() {
                    let r = lay.gamma_prime().expect("ibm layout");
                    for (slot, val) in r.zip(g_gp) {
                        g[slot] += val;
                    }
                }
            }
            (PriorHyper::Hsgp { .. }, _) => {
                let z = &u[lay.latent()];
                for &zj in z {
                    lp += -0.5 * LN_2PI - 0.5 * zj * zj;
                }
                if let Some(g) = grad.as_deref_mut() {
                    for (slot, &zj) in lay.latent().zip(z) {
                        g[slot] += -zj;
                    }
                }
            }
        }

        // --- Chain rule back to the unconstrained scale.
        if let Some(g) = grad.as_deref_mut() {
            match self.spec.prior_kind {
                PriorKind::Hsgp => {
                    let basis = self.basis.as_ref().expect("hsgp basis");
                    let (alpha, ell) = self.hsgp_params(u);
                    let scales = hsgp_scales.expect("hsgp scales");
                    let z = &u[lay.latent()];
                    // project the path gradient onto the basis
                    let mut proj = vec![0.0; basis.m];
                    for t in 0..t_len {
                        let row = &basis.phi[t * basis.m..(t + 1) * basis.m];
                        let gt = g_gamma[t];
                        for j in 0..basis.m {
                            proj[j] += row[j] * gt;
                        }
                    }
                    let mut g_alpha_c = 0.0;
                    let mut g_ell_c = 0.0;
                    for j in 0..basis.m {
                        g[j] += proj[j] * scales[j];
                        g_alpha_c += proj[j] * z[j] * scales[j] / alpha;
                        g_ell_c += proj[j]
                            * z[j]
                            * matern32_sqrt_spectral_dell(basis.sqrt_eigs[j], alpha, ell);
                    }
                    g[slots.start] += g_alpha_c * alpha;
                    g[slots.start + 1] += g_ell_c * ell;
                }
                _ => {
                    for (slot, val) in lay.latent().zip(&g_gamma) {
                        g[slot] += val;
                    }
                    g[slots.start] += g_sigma * u[slots.start].exp();
                    if self.spec.prior_kind == PriorKind::Ou {
                        g[slots.start + 1] += g_theta * u[slots.start + 1].exp();
                    }
                }
            }
            for (k, slot) in lay.log_i_seed().chain(lay.log_i_obs()).enumerate() {
                g[slot] += g_inc[k] * inc[k];
            }
            g[lay.log_rho()] += g_rho * rho;
            g[lay.log_kappa()] += g_kappa * kappa;
            g[lay.log_nu()] += g_nu * nu;
            g[lay.log_lambda()] += g_lambda * lambda;
        }

        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp
    }
}
