//! Shared helpers for the integration and acceptance suites.

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist, Poisson};
use rtinfer::model::{ModelSpec, RenewalModel};
use rtinfer::priors::PriorKind;
use rtinfer::timeseries::{CaseSeries, DiscretizedPmf, PmfKind};

pub fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 6).unwrap()
}

/// Short weekly generation/delay pmfs for small test models.
pub fn toy_pmfs() -> (DiscretizedPmf, DiscretizedPmf) {
    let g = DiscretizedPmf::from_probs(vec![0.0, 0.8, 0.2], PmfKind::Generation).unwrap();
    let d = DiscretizedPmf::from_probs(vec![0.6, 0.4], PmfKind::Delay).unwrap();
    (g, d)
}

pub fn toy_model(kind: PriorKind, t_len: usize, seed: u64) -> RenewalModel {
    let counts: Vec<u64> = (0..t_len)
        .map(|t| {
            let base = 40.0 + 25.0 * ((t as f64) * 0.45).sin();
            (base + (seed % 7) as f64) as u64
        })
        .collect();
    let cases = CaseSeries::new(start_date(), counts).unwrap();
    let (g, d) = toy_pmfs();
    let spec = ModelSpec::new(kind, g, d).unwrap();
    RenewalModel::new(cases, spec).unwrap()
}

/// Data generated from the renewal model itself (fully well-specified):
/// exponential seeds, gamma renewal incidence, negative binomial cases.
pub struct GeneratedOutbreak {
    pub cases: CaseSeries,
    pub true_rt: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn generate_from_renewal_model(
    true_rt: &[f64],
    gen: &DiscretizedPmf,
    delay: &DiscretizedPmf,
    rho: f64,
    kappa: f64,
    nu: f64,
    seed_mean: f64,
    seed: u64,
) -> GeneratedOutbreak {
    let t_len = true_rt.len();
    let n = gen.max_lag();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // seeds I_{-n}..I_0 near the seeding mean (exponential draws can be tiny,
    // which makes the outbreak die; jittered constants keep the scenario
    // informative while staying in the model's support)
    let mut inc: Vec<f64> = (0..=n)
        .map(|_| seed_mean * rng.random_range(0.7..1.3))
        .collect();
    for t in 0..t_len {
        // computing week w = t + 1; I_j sits at index j + n
        let w = t as i64 + 1;
        let mut load = 0.0;
        for (k, &p) in gen.probs().iter().enumerate().skip(1) {
            let j = w - k as i64 + n as i64;
            if j < 0 {
                break;
            }
            load += p * inc[j as usize];
        }
        let shape = true_rt[t] * load * nu;
        let draw = GammaDist::new(shape, 1.0 / nu).unwrap().sample(&mut rng);
        inc.push(draw.max(1e-3));
    }
    let mut counts = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let w = t as i64 + 1;
        let mut dload = 0.0;
        for (k, &p) in delay.probs().iter().enumerate() {
            let j = w - k as i64 + n as i64;
            if j < 0 {
                break;
            }
            dload += p * inc[j as usize];
        }
        let mean = rho * dload;
        let lambda = GammaDist::new(kappa, mean / kappa).unwrap().sample(&mut rng);
        let c = if lambda > 0.0 {
            Poisson::new(lambda).unwrap().sample(&mut rng) as u64
        } else {
            0
        };
        counts.push(c);
    }
    GeneratedOutbreak {
        cases: CaseSeries::new(start_date(), counts).unwrap(),
        true_rt: true_rt.to_vec(),
    }
}
