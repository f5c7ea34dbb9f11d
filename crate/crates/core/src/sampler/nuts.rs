//! Multinomial no-U-turn transitions with dual-averaging step-size
//! adaptation and windowed diagonal mass-matrix estimation.

use super::{ChainStats, SamplerConfig, Target};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

const MAX_INIT_TRIES: usize = 100;
const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;
const MASS_FLOOR: f64 = 1e-10;

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

impl State {
    /// logp minus kinetic energy; the multinomial log-weight base.
    fn joint(&self, inv_mass: &[f64]) -> f64 {
        if !self.logp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut kin = 0.0;
        for i in 0..self.p.len() {
            kin += self.p[i] * self.p[i] * inv_mass[i];
        }
        self.logp - 0.5 * kin
    }
}

struct Subtree {
    /// Extreme states in trajectory-time order.
    lo: State,
    hi: State,
    proposal_q: Vec<f64>,
    proposal_joint: f64,
    log_sum_weight: f64,
    sum_alpha: f64,
    n_alpha: usize,
    divergent: bool,
    turning: bool,
}

struct Chain<'a, T: Target> {
    target: &'a T,
    cfg: &'a SamplerConfig,
    rng: ChaCha8Rng,
    q: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
    inv_mass: Vec<f64>,
    eps: f64,
    // dual averaging
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    da_count: usize,
    // windowed variance estimation
    schedule: WarmupSchedule,
    welford_n: usize,
    welford_mean: Vec<f64>,
    welford_m2: Vec<f64>,
}

pub(super) fn run_chain<T: Target>(
    target: &T,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<(Vec<f64>, ChainStats)> {
    let start = Instant::now();
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Initialization: retry until the density and gradient are finite.
    let mut q = Vec::new();
    let mut grad = vec![0.0; dim];
    let mut logp = f64::NEG_INFINITY;
    let mut ok = false;
    for _ in 0..MAX_INIT_TRIES {
        q = target.initial_position(&mut rng);
        logp = target.logp_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::InitializationFailure(format!(
            "no finite starting point found in {MAX_INIT_TRIES} tries (last logp {logp})"
        )));
    }

    let mut chain = Chain {
        target,
        cfg,
        rng,
        q,
        grad,
        logp,
        inv_mass: vec![1.0; dim],
        eps: 1.0,
        mu: 0.0,
        h_bar: 0.0,
        log_eps_bar: 0.0,
        da_count: 0,
        schedule: WarmupSchedule::new(cfg.warmup),
        welford_n: 0,
        welford_mean: vec![0.0; dim],
        welford_m2: vec![0.0; dim],
    };
    chain.eps = chain.find_reasonable_epsilon();
    chain.mu = (10.0 * chain.eps).ln();
    chain.log_eps_bar = chain.eps.ln();

    let retained = cfg.retained();
    let cdim = target.constrained_dim();
    let mut out = vec![0.0; retained * cdim];
    let mut divergences = 0usize;
    let mut treedepth_hits = 0usize;
    let mut alpha_sum = 0.0;
    let mut alpha_count = 0usize;
    let mut energy_err_sum = 0.0;
    let mut energy_err_count = 0usize;

    for iter in 0..cfg.iters {
        let info = chain.step();
        let warm = iter < cfg.warmup;
        if warm {
            chain.adapt(iter, info.accept_stat);
        } else {
            chain.eps = chain.log_eps_bar.exp();
            if info.divergent {
                divergences += 1;
            }
            if info.treedepth_hit {
                treedepth_hits += 1;
            }
            alpha_sum += info.accept_stat;
            alpha_count += 1;
            if info.moved {
                energy_err_sum += info.energy_error.abs();
                energy_err_count += 1;
            }
            let row = (iter - cfg.warmup) * cdim;
            chain.target.constrain(&chain.q, &mut out[row..row + cdim]);
        }
    }

    let stats = ChainStats {
        divergences,
        treedepth_hits,
        step_size: chain.eps,
        inv_mass_diag: chain.inv_mass.clone(),
        accept_mean: if alpha_count > 0 { alpha_sum / alpha_count as f64 } else { 0.0 },
        energy_error_mean: if energy_err_count > 0 {
            energy_err_sum / energy_err_count as f64
        } else {
            0.0
        },
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    Ok((out, stats))
}

struct StepInfo {
    accept_stat: f64,
    divergent: bool,
    treedepth_hit: bool,
    moved: bool,
    energy_error: f64,
}

impl<T: Target> Chain<'_, T> {
    fn sample_momentum(&mut self) -> Vec<f64> {
        let mut p = vec![0.0; self.q.len()];
        for i in 0..p.len() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            p[i] = z / self.inv_mass[i].sqrt();
        }
        p
    }

    fn leapfrog(&self, state: &State, eps: f64) -> State {
        let dim = state.q.len();
        let mut p = state.p.clone();
        let mut q = state.q.clone();
        for i in 0..dim {
            p[i] += 0.5 * eps * state.grad[i];
        }
        for i in 0..dim {
            q[i] += eps * self.inv_mass[i] * p[i];
        }
        let mut grad = vec![0.0; dim];
        let logp = self.target.logp_grad(&q, &mut grad);
        if logp.is_finite() {
            for i in 0..dim {
                p[i] += 0.5 * eps * grad[i];
            }
        }
        State { q, p, grad, logp }
    }

    fn find_reasonable_epsilon(&mut self) -> f64 {
        let mut eps: f64 = 1.0;
        let p = self.sample_momentum();
        let state = State {
            q: self.q.clone(),
            p,
            grad: self.grad.clone(),
            logp: self.logp,
        };
        let joint0 = state.joint(&self.inv_mass);
        let log_half = 0.5f64.ln();
        let accept = |eps: f64| -> f64 {
            let next = self.leapfrog(&state, eps);
            next.joint(&self.inv_mass) - joint0
        };
        let mut a = accept(eps);
        let mut guard = 0;
        while !a.is_finite() && guard < 60 {
            eps *= 0.5;
            a = accept(eps);
            guard += 1;
        }
        let dir: f64 = if a > log_half { 1.0 } else { -1.0 };
        guard = 0;
        loop {
            let a = accept(eps);
            let keep_going = if dir > 0.0 { a > log_half } else { a.is_nan() || a < log_half };
            if !keep_going || guard >= 60 {
                break;
            }
            eps *= 2.0f64.powf(dir);
            guard += 1;
        }
        eps.clamp(1e-10, 1e2)
    }

    fn step(&mut self) -> StepInfo {
        let p0 = self.sample_momentum();
        let start = State {
            q: self.q.clone(),
            p: p0,
            grad: self.grad.clone(),
            logp: self.logp,
        };
        let joint0 = start.joint(&self.inv_mass);

        let mut minus = start.clone();
        let mut plus = start.clone();
        let mut sample_q = start.q.clone();
        let mut sample_joint = joint0;
        let mut log_sum_weight = 0.0f64; // initial state carries weight exp(0)
        let mut sum_alpha = 0.0;
        let mut n_alpha = 0usize;
        let mut divergent = false;
        let mut treedepth_hit = false;
        let mut moved = false;

        for depth in 0..self.cfg.max_treedepth {
            let dir: i8 = if self.rng.random::<bool>() { 1 } else { -1 };
            let from = if dir == 1 { plus.clone() } else { minus.clone() };
            let tree = self.build_tree(depth, &from, dir, joint0);
            sum_alpha += tree.sum_alpha;
            n_alpha += tree.n_alpha;
            if tree.divergent {
                divergent = true;
                break;
            }
            if tree.turning {
                break;
            }
            // biased progressive sampling toward the new subtree
            let take = if tree.log_sum_weight > log_sum_weight {
                true
            } else {
                let t: f64 = self.rng.random();
                t.ln() < tree.log_sum_weight - log_sum_weight
            };
            if take {
                sample_q = tree.proposal_q.clone();
                sample_joint = tree.proposal_joint;
                moved = true;
            }
            log_sum_weight = log_sum_exp(log_sum_weight, tree.log_sum_weight);
            if dir == 1 {
                plus = tree.hi;
            } else {
                minus = tree.lo;
            }
            if self.is_turning(&minus, &plus) {
                break;
            }
            if depth + 1 == self.cfg.max_treedepth {
                treedepth_hit = true;
            }
        }

        if moved {
            self.q = sample_q;
            self.logp = self.target.logp_grad(&self.q.clone(), &mut self.grad);
        }
        StepInfo {
            accept_stat: if n_alpha > 0 { sum_alpha / n_alpha as f64 } else { 0.0 },
            divergent,
            treedepth_hit,
            moved,
            energy_error: sample_joint - joint0,
        }
    }

    fn build_tree(&mut self, depth: usize, from: &State, dir: i8, joint0: f64) -> Subtree {
        if depth == 0 {
            let eps = f64::from(dir) * self.eps;
            let state = self.leapfrog(from, eps);
            let joint = state.joint(&self.inv_mass);
            let delta = joint - joint0;
            let divergent = !delta.is_finite() || -delta > self.cfg.divergence_threshold;
            let alpha = if delta.is_finite() { delta.exp().min(1.0) } else { 0.0 };
            return Subtree {
                proposal_q: state.q.clone(),
                proposal_joint: joint,
                lo: state.clone(),
                hi: state,
                log_sum_weight: if divergent { f64::NEG_INFINITY } else { delta },
                sum_alpha: alpha,
                n_alpha: 1,
                divergent,
                turning: false,
            };
        }

        let first = self.build_tree(depth - 1, from, dir, joint0);
        if first.divergent || first.turning {
            return first;
        }
        let from_outer = if dir == 1 { first.hi.clone() } else { first.lo.clone() };
        let second = self.build_tree(depth - 1, &from_outer, dir, joint0);

        let log_sum_weight = log_sum_exp(first.log_sum_weight, second.log_sum_weight);
        let sum_alpha = first.sum_alpha + second.sum_alpha;
        let n_alpha = first.n_alpha + second.n_alpha;
        if second.divergent || second.turning {
            return Subtree {
                divergent: second.divergent,
                turning: second.turning,
                log_sum_weight,
                sum_alpha,
                n_alpha,
                ..second
            };
        }
        // multinomial choice between the two halves
        let t: f64 = self.rng.random();
        let (proposal_q, proposal_joint) = if t.ln() < second.log_sum_weight - log_sum_weight {
            (second.proposal_q, second.proposal_joint)
        } else {
            (first.proposal_q, first.proposal_joint)
        };
        let (lo, hi) = if dir == 1 {
            (first.lo, second.hi)
        } else {
            (second.lo, first.hi)
        };
        let turning = self.is_turning(&lo, &hi);
        Subtree {
            lo,
            hi,
            proposal_q,
            proposal_joint,
            log_sum_weight,
            sum_alpha,
            n_alpha,
            divergent: false,
            turning,
        }
    }

    /// Classic no-U-turn criterion with metric-weighted velocities.
    fn is_turning(&self, lo: &State, hi: &State) -> bool {
        let mut dot_lo = 0.0;
        let mut dot_hi = 0.0;
        for i in 0..lo.q.len() {
            let dq = hi.q[i] - lo.q[i];
            dot_lo += dq * self.inv_mass[i] * lo.p[i];
            dot_hi += dq * self.inv_mass[i] * hi.p[i];
        }
        dot_lo < 0.0 || dot_hi < 0.0
    }

    fn adapt(&mut self, iter: usize, accept_stat: f64) {
        // dual averaging toward the target acceptance statistic
        self.da_count += 1;
        let m = self.da_count as f64;
        let eta = 1.0 / (m + DA_T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.cfg.target_accept - accept_stat);
        let log_eps = self.mu - m.sqrt() / DA_GAMMA * self.h_bar;
        self.eps = log_eps.exp().clamp(1e-12, 1e4);
        let x = m.powf(-DA_KAPPA);
        self.log_eps_bar = (1.0 - x) * self.log_eps_bar + x * log_eps;

        // windowed variance collection for the diagonal mass matrix
        if self.schedule.in_window(iter) {
            self.welford_n += 1;
            let n = self.welford_n as f64;
            for i in 0..self.q.len() {
                let d = self.q[i] - self.welford_mean[i];
                self.welford_mean[i] += d / n;
                self.welford_m2[i] += d * (self.q[i] - self.welford_mean[i]);
            }
        }
        if self.schedule.is_window_end(iter) && self.welford_n >= 10 {
            let n = self.welford_n as f64;
            for i in 0..self.inv_mass.len() {
                let var = self.welford_m2[i] / (n - 1.0);
                self.inv_mass[i] = (n / (n + 5.0) * var + 1e-3 * (5.0 / (n + 5.0))).max(MASS_FLOOR);
            }
            self.welford_n = 0;
            self.welford_mean.fill(0.0);
            self.welford_m2.fill(0.0);
            // restart step-size adaptation under the new metric
            self.eps = self.find_reasonable_epsilon();
            self.mu = (10.0 * self.eps).ln();
            self.h_bar = 0.0;
            self.log_eps_bar = self.eps.ln();
            self.da_count = 0;
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Three-phase warmup: a fast start buffer, doubling covariance windows, and
/// a fast terminal buffer that re-tunes the step size.
struct WarmupSchedule {
    window_start: usize,
    window_ends: Vec<usize>,
}

impl WarmupSchedule {
    fn new(warmup: usize) -> Self {
        if warmup < 20 {
            return Self { window_start: usize::MAX, window_ends: Vec::new() };
        }
        let mut init = 75usize;
        let mut term = 50usize;
        let mut base = 25usize;
        if init + term + base > warmup {
            init = ((warmup as f64) * 0.15).round() as usize;
            term = ((warmup as f64) * 0.10).round() as usize;
            base = warmup - init - term;
        }
        let last_end = warmup - term;
        let mut ends = Vec::new();
        let mut start = init;
        let mut size = base;
        loop {
            let mut end = start + size;
            // absorb a final short window into the previous one
            if end + 2 * size > last_end {
                end = last_end;
            }
            ends.push(end);
            if end >= last_end {
                break;
            }
            start = end;
            size *= 2;
        }
        Self { window_start: init, window_ends: ends }
    }

    fn in_window(&self, iter: usize) -> bool {
        if self.window_ends.is_empty() {
            return false;
        }
        iter >= self.window_start && iter < *self.window_ends.last().expect("nonempty")
    }

    fn is_window_end(&self, iter: usize) -> bool {
        self.window_ends.contains(&(iter + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule_covers_standard_run() {
        let s = WarmupSchedule::new(2000);
        assert_eq!(s.window_start, 75);
        assert_eq!(*s.window_ends.last().unwrap(), 1950);
        // doubling windows: 25, 50, 100, 200, 400, then the remainder
        assert!(s.window_ends.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn warmup_schedule_short_runs() {
        let s = WarmupSchedule::new(150);
        let last = *s.window_ends.last().unwrap();
        assert!(last <= 150 - 15 + 1, "terminal buffer kept: {last}");
        let none = WarmupSchedule::new(10);
        assert!(none.window_ends.is_empty());
    }

    #[test]
    fn log_sum_exp_basics() {
        assert!((log_sum_exp(0.0, 0.0) - 2.0f64.ln()).abs() < 1e-14);
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, -1.0), -1.0);
    }
}
