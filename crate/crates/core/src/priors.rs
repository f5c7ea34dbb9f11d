//! Smoothing priors for the latent log reproduction number: first- and
//! second-order Gaussian random walks, Ornstein-Uhlenbeck, integrated
//! Brownian motion in its augmented Markov form, and a reduced-rank
//! Hilbert-space approximation to a Matern-3/2 Gaussian process.
//!
//! Each Markov prior is a product of low-order conditional Gaussian
//! transitions, so the log-density is a single pass over the path. The
//! `*_grad` variants accumulate analytic derivatives with respect to the
//! path and the prior's own hyperparameters in the same pass.

use crate::dist::{normal_logpdf, LN_2PI};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriorKind {
    Rw1,
    Ou,
    Rw2,
    Ibm,
    Hsgp,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Rw1 => "rw1",
            PriorKind::Ou => "ou",
            PriorKind::Rw2 => "rw2",
            PriorKind::Ibm => "ibm",
            PriorKind::Hsgp => "hsgp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rw1" => Ok(PriorKind::Rw1),
            "ou" => Ok(PriorKind::Ou),
            "rw2" => Ok(PriorKind::Rw2),
            "ibm" => Ok(PriorKind::Ibm),
            "hsgp" => Ok(PriorKind::Hsgp),
            other => Err(Error::Config(format!(
                "unknown prior `{other}` (expected rw1|ou|rw2|ibm|hsgp)"
            ))),
        }
    }

    pub const ALL: [PriorKind; 5] = [
        PriorKind::Rw1,
        PriorKind::Ou,
        PriorKind::Rw2,
        PriorKind::Ibm,
        PriorKind::Hsgp,
    ];
}

/// Current values of a prior's parameters. Kind-specific fields exist
/// exactly when the kind requires them.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorHyper {
    Rw1 { sigma: f64, mu1: f64, sigma1: f64 },
    Ou { sigma: f64, theta: f64, mu1: f64, sigma1: f64 },
    Rw2 { sigma: f64, mu1: f64, sigma1: f64 },
    Ibm { sigma: f64, mu1: f64, sigma1: f64, mu1_prime: f64 },
    Hsgp { alpha: f64, ell: f64 },
}

impl PriorHyper {
    pub fn kind(&self) -> PriorKind {
        match self {
            PriorHyper::Rw1 { .. } => PriorKind::Rw1,
            PriorHyper::Ou { .. } => PriorKind::Ou,
            PriorHyper::Rw2 { .. } => PriorKind::Rw2,
            PriorHyper::Ibm { .. } => PriorKind::Ibm,
            PriorHyper::Hsgp { .. } => PriorKind::Hsgp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PriorHyper::Rw1 { sigma, sigma1, .. } => sigma > 0.0 && sigma1 > 0.0,
            PriorHyper::Ou { sigma, theta, sigma1, .. } => sigma > 0.0 && theta > 0.0 && sigma1 > 0.0,
            PriorHyper::Rw2 { sigma, sigma1, .. } => sigma > 0.0 && sigma1 > 0.0,
            PriorHyper::Ibm { sigma, sigma1, .. } => sigma > 0.0 && sigma1 > 0.0,
            PriorHyper::Hsgp { alpha, ell } => alpha > 0.0 && ell > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("non-positive scale in {self:?}")))
        }
    }
}

/// A latent log-R path; `gamma_prime` is present exactly for the IBM prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPath {
    pub gamma: Vec<f64>,
    pub gamma_prime: Option<Vec<f64>>,
}

impl GammaPath {
    pub fn new(gamma: Vec<f64>, gamma_prime: Option<Vec<f64>>) -> Result<Self> {
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidParameter("non-finite path entry".into()));
        }
        if let Some(gp) = &gamma_prime {
            if gp.len() != gamma.len() {
                return Err(Error::InvalidParameter("gamma_prime length mismatch".into()));
            }
            if gp.iter().any(|g| !g.is_finite()) {
                return Err(Error::InvalidParameter("non-finite derivative entry".into()));
            }
        }
        Ok(Self { gamma, gamma_prime })
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Log-density of the path under `hyper`. For HSGP use [`logprior_hsgp`]
/// on the whitened coordinates instead; the path itself is a deterministic
/// map of those.
pub fn log_prior(path: &GammaPath, hyper: &PriorHyper) -> Result<f64> {
    hyper.validate()?;
    match hyper {
        PriorHyper::Rw1 { .. } => Ok(logprior_rw1(&path.gamma, hyper)),
        PriorHyper::Ou { .. } => Ok(logprior_ou(&path.gamma, hyper)),
        PriorHyper::Rw2 { .. } => Ok(logprior_rw2(&path.gamma, hyper)),
        PriorHyper::Ibm { .. } => {
            let gp = path
                .gamma_prime
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("IBM prior needs gamma_prime".into()))?;
            Ok(logprior_ibm(&path.gamma, gp, hyper))
        }
        PriorHyper::Hsgp { .. } => Err(Error::InvalidParameter(
            "HSGP density is evaluated on whitened coordinates (logprior_hsgp)".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// RW1: increments N(0, sigma^2 / (T-1)), so Var(Gamma_T | Gamma_1) = sigma^2.
// ---------------------------------------------------------------------------

pub fn logprior_rw1(gamma: &[f64], hyper: &PriorHyper) -> f64 {
    rw1_logprior_grad(gamma, hyper, None, None)
}

pub(crate) fn rw1_logprior_grad(
    gamma: &[f64],
    hyper: &PriorHyper,
    mut grad_gamma: Option<&mut [f64]>,
    grad_sigma: Option<&mut f64>,
) -> f64 {
    let (sigma, mu1, sigma1) = match *hyper {
        PriorHyper::Rw1 { sigma, mu1, sigma1 } => (sigma, mu1, sigma1),
        _ => unreachable!("rw1 density with non-rw1 hyper"),
    };
    let t_len = gamma.len();
    debug_assert!(t_len >= 2);
    let v = sigma * sigma / (t_len as f64 - 1.0);

    let mut lp = normal_logpdf(gamma[0], mu1, sigma1);
    if let Some(g) = grad_gamma.as_deref_mut() {
        g[0] += -(gamma[0] - mu1) / (sigma1 * sigma1);
    }
    let mut dv = 0.0;
    for t in 1..t_len {
        let r = gamma[t] - gamma[t - 1];
        lp += -0.5 * LN_2PI - 0.5 * v.ln() - 0.5 * r * r / v;
        if let Some(g) = grad_gamma.as_deref_mut() {
            g[t] += -r / v;
            g[t - 1] += r / v;
        }
        dv += -0.5 / v + 0.5 * r * r / (v * v);
    }
    if let Some(gs) = grad_sigma {
        *gs += dv * 2.0 * sigma / (t_len as f64 - 1.0);
    }
    lp
}

// ---------------------------------------------------------------------------
// OU: transitions N(Gamma_{t-1} e^{-theta}, sigma^2 (1 - e^{-2 theta}) / (2 theta))
// with stationary mean 0.
// ---------------------------------------------------------------------------

pub fn logprior_ou(gamma: &[f64], hyper: &PriorHyper) -> f64 {
    ou_logprior_grad(gamma, hyper, None, None, None)
}

pub(crate) fn ou_logprior_grad(
    gamma: &[f64],
    hyper: &PriorHyper,
    mut grad_gamma: Option<&mut [f64]>,
    grad_sigma: Option<&mut f64>,
    grad_theta: Option<&mut f64>,
) -> f64 {
    let (sigma, theta, mu1, sigma1) = match *hyper {
        PriorHyper::Ou { sigma, theta, mu1, sigma1 } => (sigma, theta, mu1, sigma1),
        _ => unreachable!("ou density with non-ou hyper"),
    };
    let phi = (-theta).exp();
    let decay = 1.0 - phi * phi; // 1 - e^{-2 theta}
    let v = sigma * sigma * decay / (2.0 * theta);

    let mut lp = normal_logpdf(gamma[0], mu1, sigma1);
    if let Some(g) = grad_gamma.as_deref_mut() {
        g[0] += -(gamma[0] - mu1) / (sigma1 * sigma1);
    }
    let mut dv = 0.0;
    let mut dphi = 0.0;
    for t in 1..gamma.len() {
        let r = gamma[t] - phi * gamma[t - 1];
        lp += -0.5 * LN_2PI - 0.5 * v.ln() - 0.5 * r * r / v;
        if let Some(g) = grad_gamma.as_deref_mut() {
            g[t] += -r / v;
            g[t - 1] += r * phi / v;
        }
        dphi += r * gamma[t - 1] / v;
        dv += -0.5 / v + 0.5 * r * r / (v * v);
    }
    if let Some(gs) = grad_sigma {
        *gs += dv * 2.0 * v / sigma;
    }
    if let Some(gt) = grad_theta {
        // d v / d theta = sigma^2 * [2 theta e^{-2 theta} - (1 - e^{-2 theta})] / (2 theta^2)
        let dv_dtheta = sigma * sigma * (2.0 * theta * phi * phi - decay) / (2.0 * theta * theta);
        *gt += dphi * (-phi) + dv * dv_dtheta;
    }
    lp
}

// ---------------------------------------------------------------------------
// RW2: second differences N(0, sigma^2); first step N(Gamma_1, sigma^2).
// ---------------------------------------------------------------------------

pub fn logprior_rw2(gamma: &[f64], hyper: &PriorHyper) -> f64 {
    rw2_logprior_grad(gamma, hyper, None, None)
}

pub(crate) fn rw2_logprior_grad(
    gamma: &[f64],
    hyper: &PriorHyper,
    mut grad_gamma: Option<&mut [f64]>,
    grad_sigma: Option<&mut f64>,
) -> f64 {
    let (sigma, mu1, sigma1) = match *hyper {
        PriorHyper::Rw2 { sigma, mu1, sigma1 } => (sigma, mu1, sigma1),
        _ => unreachable!("rw2 density with non-rw2 hyper"),
    };
    let t_len = gamma.len();
    debug_assert!(t_len >= 3);
    let v = sigma * sigma;

    let mut lp = normal_logpdf(gamma[0], mu1, sigma1);
    if let Some(g) = grad_gamma.as_deref_mut() {
        g[0] += -(gamma[0] - mu1) / (sigma1 * sigma1);
    }
    let mut dv = 0.0;

    let r1 = gamma[1] - gamma[0];
    lp += -0.5 * LN_2PI - 0.5 * v.ln() - 0.5 * r1 * r1 / v;
    if let Some(g) = grad_gamma.as_deref_mut() {
        g[1] += -r1 / v;
        g[0] += r1 / v;
    }
    dv += -0.5 / v + 0.5 * r1 * r1 / (v * v);

    for t in 2..t_len {
        let r = gamma[t] - 2.0 * gamma[t - 1] + gamma[t - 2];
        lp += -0.5 * LN_2PI - 0.5 * v.ln() - 0.5 * r * r / v;
        if let Some(g) = grad_gamma.as_deref_mut() {
            g[t] += -r / v;
            g[t - 1] += 2.0 * r / v;
            g[t - 2] += -r / v;
        }
        dv += -0.5 / v + 0.5 * r * r / (v * v);
    }
    if let Some(gs) = grad_sigma {
        *gs += dv * 2.0 * sigma;
    }
    lp
}

// ---------------------------------------------------------------------------
// IBM: (Gamma', Gamma) jointly Markov with per-step time increment sigma^2.
// Transition covariance [[D, D^2/2], [D^2/2, D^3/3]] for D = sigma^2 has the
// closed-form inverse [[4/D, -6/D^2], [-6/D^2, 12/D^3]] and det D^4/12.
// ---------------------------------------------------------------------------

pub fn logprior_ibm(gamma: &[f64], gamma_prime: &[f64], hyper: &PriorHyper) -> f64 {
    ibm_logprior_grad(gamma, gamma_prime, hyper, None, None, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn ibm_logprior_grad(
    gamma: &[f64],
    gamma_prime: &[f64],
    hyper: &PriorHyper,
    mut grad_gamma: Option<&mut [f64]>,
    mut grad_gamma_prime: Option<&mut [f64]>,
    grad_sigma: Option<&mut f64>,
) -> f64 {
    let (sigma, mu1, sigma1, mu1_prime) = match *hyper {
        PriorHyper::Ibm { sigma, mu1, sigma1, mu1_prime } => (sigma, mu1, sigma1, mu1_prime),
        _ => unreachable!("ibm density with non-ibm hyper"),
    };
    debug_assert_eq!(gamma.len(), gamma_prime.len());

    // shared bivariate kernel: residuals (r1, r2) against increment d
    let step = |d: f64, r1: f64, r2: f64| -> (f64, f64, f64) {
        let q1 = 4.0 * r1 / d - 6.0 * r2 / (d * d);
        let q2 = -6.0 * r1 / (d * d) + 12.0 * r2 / (d * d * d);
        let logdet = 4.0 * d.ln() - (12.0f64).ln();
        let quad = r1 * q1 + r2 * q2;
        (-LN_2PI - 0.5 * logdet - 0.5 * quad, q1, q2)
    };

    // initial state: mean (mu1_prime, mu1), covariance from sigma1
    let d1 = sigma1 * sigma1;
    let (lp0, q1, q2) = step(d1, gamma_prime[0] - mu1_prime, gamma[0] - mu1);
    let mut lp = lp0;
    if let Some(g) = grad_gamma_prime.as_deref_mut() {
        g[0] += -q1;
    }
    if let Some(g) = grad_gamma.as_deref_mut() {
        g[0] += -q2;
    }

    let d = sigma * sigma;
    let mut dd_total = 0.0;
    for t in 1..gamma.len() {
        let r1 = gamma_prime[t] - gamma_prime[t - 1];
        let r2 = gamma[t] - gamma[t - 1] - d * gamma_prime[t - 1];
        let (lpt, q1, q2) = step(d, r1, r2);
        lp += lpt;
        if let Some(g) = grad_gamma_prime.as_deref_mut() {
            g[t] += -q1;
            g[t - 1] += q1 + d * q2;
        }
        if let Some(g) = grad_gamma.as_deref_mut() {
            g[t] += -q2;
            g[t - 1] += q2;
        }
        // d/dD of the log-density at fixed path: det term, inverse term, and
        // the mean's dependence on D through r2.
        dd_total += -2.0 / d
            + 2.0 * r1 * r1 / (d * d)
            - 12.0 * r1 * r2 / (d * d * d)
            + 18.0 * r2 * r2 / (d * d * d * d)
            + q2 * gamma_prime[t - 1];
    }
    if let Some(gs) = grad_sigma {
        *gs += dd_total * 2.0 * sigma;
    }
    lp
}

// ---------------------------------------------------------------------------
// HSGP: reduced-rank Matern-3/2 on a boundary-extended interval.
// ---------------------------------------------------------------------------

/// Matern-3/2 kernel value at lag `dt`.
pub fn matern32(dt: f64, alpha: f64, ell: f64) -> f64 {
    let a = 3.0f64.sqrt() * dt.abs() / ell;
    alpha * alpha * (1.0 + a) * (-a).exp()
}

/// One-dimensional Matern-3/2 spectral density at frequency `omega`.
pub fn matern32_spectral(omega: f64, alpha: f64, ell: f64) -> f64 {
    let base = 3.0 / (ell * ell) + omega * omega;
    alpha * alpha * 4.0 * 3.0f64.powf(1.5) / (ell * ell * ell) / (base * base)
}

/// sqrt of the spectral density, the per-basis-function scale.
pub fn matern32_sqrt_spectral(omega: f64, alpha: f64, ell: f64) -> f64 {
    let base = 3.0 / (ell * ell) + omega * omega;
    alpha * 2.0 * 3.0f64.powf(0.75) / ell.powf(1.5) / base
}

/// d/d ell of [`matern32_sqrt_spectral`] at fixed omega and alpha.
pub fn matern32_sqrt_spectral_dell(omega: f64, alpha: f64, ell: f64) -> f64 {
    let s = matern32_sqrt_spectral(omega, alpha, ell);
    let base = 3.0 / (ell * ell) + omega * omega;
    s * (-1.5 / ell + 6.0 / (ell * ell * ell * base))
}

/// Sine basis on the boundary-extended interval, built once per fit.
#[derive(Debug, Clone)]
pub struct HsgpBasis {
    /// T x M, row-major: phi[t * m + j].
    pub phi: Vec<f64>,
    /// Frequencies omega_j = pi (j+1) / (2 L): sqrt of the Laplacian eigenvalues.
    pub sqrt_eigs: Vec<f64>,
    pub t_len: usize,
    pub m: usize,
    /// Half-width of the extended domain.
    pub l: f64,
    /// Boundary factor actually used.
    pub c: f64,
}

/// Build the reduced-rank basis for a length-`t_len` weekly grid with
/// reference length scale `ell_ref`:
/// c = max(4.5 * ell_ref / (d/2), 1.2), M = ceil(3.45 * c * (d/2) / ell_ref),
/// with d = t_len - 1, grid points centered in [-d/2, d/2], and L = c * d/2.
pub fn hsgp_basis(t_len: usize, ell_ref: f64) -> Result<HsgpBasis> {
    if t_len < 2 {
        return Err(Error::InvalidParameter(format!("hsgp basis needs T >= 2, got {t_len}")));
    }
    if !(ell_ref > 0.0) {
        return Err(Error::InvalidParameter(format!("ell_ref must be > 0, got {ell_ref}")));
    }
    let half = (t_len as f64 - 1.0) / 2.0;
    let c = (4.5 * ell_ref / half).max(1.2);
    let m = (3.45 * c * half / ell_ref).ceil() as usize;
    if m == 0 {
        return Err(Error::DegenerateDistribution("hsgp basis has zero functions".into()));
    }
    let l = c * half;
    let mut phi = vec![0.0; t_len * m];
    let mut sqrt_eigs = Vec::with_capacity(m);
    for j in 0..m {
        sqrt_eigs.push(std::f64::consts::PI * (j as f64 + 1.0) / (2.0 * l));
    }
    let norm = 1.0 / l.sqrt();
    for t in 0..t_len {
        let x = t as f64 - half;
        for (j, om) in sqrt_eigs.iter().enumerate() {
            phi[t * m + j] = norm * (om * (x + l)).sin();
        }
    }
    Ok(HsgpBasis { phi, sqrt_eigs, t_len, m, l, c })
}

impl HsgpBasis {
    /// Map whitened coordinates to the path: gamma = Phi diag(sqrt S) z.
    pub fn gamma_from_z(&self, z: &[f64], alpha: f64, ell: f64) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.m);
        let scales: Vec<f64> = self
            .sqrt_eigs
            .iter()
            .map(|&om| matern32_sqrt_spectral(om, alpha, ell))
            .collect();
        let mut gamma = vec![0.0; self.t_len];
        for t in 0..self.t_len {
            let row = &self.phi[t * self.m..(t + 1) * self.m];
            let mut acc = 0.0;
            for j in 0..self.m {
                acc += row[j] * scales[j] * z[j];
            }
            gamma[t] = acc;
        }
        gamma
    }

    /// Phi^T v, used to push path gradients back to the coefficients.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.t_len);
        let mut out = vec![0.0; self.m];
        for t in 0..self.t_len {
            let row = &self.phi[t * self.m..(t + 1) * self.m];
            for j in 0..self.m {
                out[j] += row[j] * v[t];
            }
        }
        out
    }

    /// The implied low-rank covariance Phi S Phi^T (T x T, row-major).
    pub fn covariance(&self, alpha: f64, ell: f64) -> Vec<f64> {
        let s: Vec<f64> = self
            .sqrt_eigs
            .iter()
            .map(|&om| matern32_spectral(om, alpha, ell))
            .collect();
        let mut k = vec![0.0; self.t_len * self.t_len];
        for a in 0..self.t_len {
            for b in a..self.t_len {
                let mut acc = 0.0;
                for j in 0..self.m {
                    acc += self.phi[a * self.m + j] * s[j] * self.phi[b * self.m + j];
                }
                k[a * self.t_len + b] = acc;
                k[b * self.t_len + a] = acc;
            }
        }
        k
    }
}

/// Log-density of the whitened HSGP coordinates: standard normal on z.
pub fn logprior_hsgp(z: &[f64]) -> f64 {
    let mut lp = 0.0;
    for &zj in z {
        lp += -0.5 * LN_2PI - 0.5 * zj * zj;
    }
    lp
}

// ---------------------------------------------------------------------------
// Forward sampling, for prior-predictive checks and the simulation-recovery
// tests.
// ---------------------------------------------------------------------------

/// Draw a path from the prior by ancestral sampling (HSGP: z ~ N(0, I)).
pub fn sample_prior(hyper: &PriorHyper, t_len: usize, seed: u64) -> Result<GammaPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_prior_with(hyper, t_len, &mut rng)
}

pub fn sample_prior_with<R: Rng>(hyper: &PriorHyper, t_len: usize, rng: &mut R) -> Result<GammaPath> {
    hyper.validate()?;
    if t_len < 2 {
        return Err(Error::InvalidParameter("path length must be >= 2".into()));
    }
    let std = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    match *hyper {
        PriorHyper::Rw1 { sigma, mu1, sigma1 } => {
            let sd = sigma / (t_len as f64 - 1.0).sqrt();
            let mut g = Vec::with_capacity(t_len);
            g.push(mu1 + sigma1 * std(rng));
            for _ in 1..t_len {
                let prev = *g.last().expect("nonempty");
                g.push(prev + sd * std(rng));
            }
            GammaPath::new(g, None)
        }
        PriorHyper::Ou { sigma, theta, mu1, sigma1 } => {
            let phi = (-theta).exp();
            let sd = (sigma * sigma * (1.0 - phi * phi) / (2.0 * theta)).sqrt();
            let mut g = Vec::with_capacity(t_len);
            g.push(mu1 + sigma1 * std(rng));
            for _ in 1..t_len {
                let prev = *g.last().expect("nonempty");
                g.push(phi * prev + sd * std(rng));
            }
            GammaPath::new(g, None)
        }
        PriorHyper::Rw2 { sigma, mu1, sigma1 } => {
            let mut g = Vec::with_capacity(t_len);
            g.push(mu1 + sigma1 * std(rng));
            g.push(g[0] + sigma * std(rng));
            for t in 2..t_len {
                g.push(2.0 * g[t - 1] - g[t - 2] + sigma * std(rng));
            }
            GammaPath::new(g, None)
        }
        PriorHyper::Ibm { sigma, mu1, sigma1, mu1_prime } => {
            let mut g = Vec::with_capacity(t_len);
            let mut gp = Vec::with_capacity(t_len);
            let (p0, x0) = sample_ibm_step(mu1_prime, mu1, sigma1 * sigma1, rng);
            gp.push(p0);
            g.push(x0);
            let d = sigma * sigma;
            for t in 1..t_len {
                let mean_p = gp[t - 1];
                let mean_x = g[t - 1] + d * gp[t - 1];
                let (p, x) = sample_ibm_step(mean_p, mean_x, d, rng);
                gp.push(p);
                g.push(x);
            }
            GammaPath::new(g, Some(gp))
        }
        PriorHyper::Hsgp { alpha, ell } => {
            let basis = hsgp_basis(t_len, ell)?;
            let z: Vec<f64> = (0..basis.m).map(|_| std(rng)).collect();
            GammaPath::new(basis.gamma_from_z(&z, alpha, ell), None)
        }
    }
}

/// One draw from N2(mean, [[D, D^2/2],[D^2/2, D^3/3]]) via its Cholesky factor
/// [[sqrt(D), 0], [D^{3/2}/2, D^{3/2}/(2 sqrt 3)]].
fn sample_ibm_step<R: Rng>(mean_p: f64, mean_x: f64, d: f64, rng: &mut R) -> (f64, f64) {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    let sd = d.sqrt();
    let p = mean_p + sd * z1;
    let x = mean_x + d * sd / 2.0 * z1 + d * sd / (2.0 * 3.0f64.sqrt()) * z2;
    (p, x)
}
