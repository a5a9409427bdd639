//! Stationary law of the line-counting process of the enlarged ancestral
//! graph: rates `i -> i-1` at `i(i-1)`, `i -> i+1` at `i sigma`, `i -> 2i` at
//! `lambda`.
//!
//! The law is computed from its ratio recursion and normalized with a
//! rigorous bracket built from an explicit per-state upper bound. Two Monte
//! Carlo oracles (time occupation of the chain, absorption of its Siegmund
//! dual) are provided for cross-checking.

use rand::Rng;
use rand_distr::Exp1;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mc::{self, MeanVar};

/// Unnormalized weights `r(k) = pi(k) / pi(1)` for `k = 1..=cutoff` (index `k - 1`).
pub fn unnormalized_ratios(env: &Environment, cutoff: usize) -> Vec<f64> {
    let sigma = env.sigma();
    let lambda = env.total_mass();
    let mut r = Vec::with_capacity(cutoff);
    if cutoff == 0 {
        return r;
    }
    r.push(1.0);
    for k in 2..=cutoff {
        let kf = k as f64;
        let lo = k.div_ceil(2);
        // direct summation: prefix-sum differences cancel badly once r(k) is tiny
        let window: f64 = r[lo - 1..k - 1].iter().sum();
        r.push(sigma / kf * r[k - 2] + lambda / (kf * (kf - 1.0)) * window);
    }
    r
}

/// Explicit upper bound on `pi(j)` alone.
///
/// `j = 1`: 1. `j = 2, 3`: `min(1, (sigma + lambda) / j)`. `j >= 4`: the
/// dyadic-product bound evaluated at `n = floor(log2 j) - 2`.
pub fn state_bound(env: &Environment, j: usize) -> f64 {
    let s = env.sigma() + env.total_mass();
    match j {
        0 => 0.0,
        1 => 1.0,
        2 | 3 => (s / j as f64).min(1.0),
        _ => {
            let n = dyadic_level(j);
            (block_coefficient(env, n) / (j as f64 * (j as f64 - 1.0))).min(1.0)
        }
    }
}

/// `n = floor(log2 j) - 2` for `j >= 4`.
fn dyadic_level(j: usize) -> u32 {
    (usize::BITS - 1 - j.leading_zeros()) - 2
}

/// `(sigma(sigma+lambda)+lambda) * exp(n log(sigma+lambda) - (log 2 / 2) n (n-1))`,
/// the numerator shared by every `j` with `floor(log2 j) = n + 2`.
fn block_coefficient(env: &Environment, n: u32) -> f64 {
    let sigma = env.sigma();
    let s = sigma + env.total_mass();
    let c = sigma * s + env.total_mass();
    if c == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let log_s = if n == 0 { 0.0 } else { nf * s.ln() };
    c * (log_s - std::f64::consts::LN_2 / 2.0 * nf * (nf - 1.0)).exp()
}

/// Rigorous upper bound on `sum_{j >= k} pi(j)`, clamped to 1.
///
/// States below 4 use [`state_bound`] directly. From 4 on, the per-state
/// bounds are summed block by block over dyadic ranges `[2^p, 2^(p+1))`, where
/// the `1/(j(j-1))` factor telescopes exactly. Once the block ratio
/// `(sigma + lambda) / 2^(n+1)` is at most 1/2 and the block sums are
/// negligible, the remainder is closed with the geometric series of that
/// ratio, which dominates every later block ratio.
pub fn tail_bound(env: &Environment, k: usize) -> f64 {
    let k = k.max(1);
    let mut total = 0.0;
    for j in k..4 {
        total += state_bound(env, j);
    }
    let s = env.sigma() + env.total_mass();
    let mut start = k.max(4);
    loop {
        let n = dyadic_level(start);
        let block_end = (1usize << (n + 3)) - 1;
        let coeff = block_coefficient(env, n);
        // sum_{j=a}^{b} 1/(j(j-1)) = 1/(a-1) - 1/b
        let block = coeff * (1.0 / (start as f64 - 1.0) - 1.0 / block_end as f64);
        total += block;
        if total >= 1.0 {
            return 1.0;
        }
        let ratio = s / (1u64 << (n + 1).min(62)) as f64;
        if block == 0.0 || (ratio <= 0.5 && block <= 1e-18 * total) {
            if ratio > 0.0 {
                total += block * ratio / (1.0 - ratio);
            }
            return total.min(1.0);
        }
        if n >= 60 {
            return total.min(1.0);
        }
        start = block_end + 1;
    }
}

/// `pi(1..=cutoff)` with a certified normalization bracket.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    pub env: Environment,
    pub cutoff: usize,
    pub ratios: Vec<f64>,
    pub pi: Vec<f64>,
    /// Upper bound on `sum_{j > cutoff} pi(j)`.
    pub tail_upper: f64,
    /// `pi(1)` lies in `[lower, upper]`.
    pub pi1_bracket: (f64, f64),
}

impl StationaryDistribution {
    /// `pi(k)` for `1 <= k <= cutoff`, 0 beyond.
    pub fn pi(&self, k: usize) -> f64 {
        if k == 0 || k > self.cutoff {
            0.0
        } else {
            self.pi[k - 1]
        }
    }

    /// Rigorous upper bound on `sum_{j >= k} pi(j)`: the computed ratios scaled by
    /// the upper end of the `pi(1)` bracket up to the cutoff, plus the analytic tail.
    pub fn tail_upper_from(&self, k: usize) -> f64 {
        let k = k.max(1);
        let inside: f64 = if k <= self.cutoff {
            self.ratios[k - 1..].iter().sum::<f64>() * self.pi1_bracket.1
        } else {
            0.0
        };
        let beyond = if k <= self.cutoff + 1 {
            self.tail_upper
        } else {
            tail_bound(&self.env, k)
        };
        (inside + beyond).min(1.0)
    }

    /// `sum_{j >= k} pi(j)` using the midpoint normalization (no tail term).
    pub fn tail_estimate(&self, k: usize) -> f64 {
        let k = k.max(1);
        if k > self.cutoff {
            0.0
        } else {
            self.pi[k - 1..].iter().sum()
        }
    }

    /// Largest relative residual of the ratio recursion over `2 <= k <= cutoff`.
    pub fn recursion_residual(&self) -> f64 {
        let sigma = self.env.sigma();
        let lambda = self.env.total_mass();
        (2..=self.cutoff)
            .map(|k| {
                let kf = k as f64;
                let window: f64 = self.pi[k.div_ceil(2) - 1..k - 1].iter().sum();
                let rhs = sigma / kf * self.pi[k - 2] + lambda / (kf * (kf - 1.0)) * window;
                let lhs = self.pi[k - 1];
                let scale = lhs.abs().max(rhs.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (lhs - rhs).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Normalizes the ratio recursion on `1..=cutoff`.
///
/// With `S = sum r(j)` and `eps = tail_bound(cutoff + 1)`, `pi(1)` lies in
/// `[(1 - eps)/S, 1/S]`; the point values use the bracket midpoint.
pub fn compute_pi(env: &Environment, cutoff: usize) -> Result<StationaryDistribution> {
    if cutoff == 0 {
        return Err(Error::InvalidArgument("cutoff must be >= 1".into()));
    }
    let eps = tail_bound(env, cutoff + 1);
    if eps >= 0.5 {
        return Err(Error::CutoffTooSmall { cutoff, tail: eps });
    }
    let ratios = unnormalized_ratios(env, cutoff);
    let total: f64 = ratios.iter().sum();
    let bracket = ((1.0 - eps) / total, 1.0 / total);
    let mid = 0.5 * (bracket.0 + bracket.1);
    let pi = ratios.iter().map(|r| r * mid).collect();
    Ok(StationaryDistribution {
        env: env.clone(),
        cutoff,
        ratios,
        pi,
        tail_upper: eps,
        pi1_bracket: bracket,
    })
}

/// Time-occupation estimate of the stationary law.
#[derive(Debug, Clone)]
pub struct Occupation {
    /// Fraction of post-burn-in time spent in state `k` (index `k - 1`).
    pub fractions: Vec<f64>,
    /// Batch-means standard errors, same indexing.
    pub std_errors: Vec<f64>,
    pub events: u64,
}

impl Occupation {
    pub fn fraction(&self, k: usize) -> f64 {
        self.fractions.get(k.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    pub fn std_error(&self, k: usize) -> f64 {
        self.std_errors.get(k.wrapping_sub(1)).copied().unwrap_or(0.0)
    }
}

const OCCUPATION_BATCHES: usize = 64;

/// Next state of the line-counting chain from `n`, or `None` when no move is possible.
fn line_count_jump<R: Rng + ?Sized>(env: &Environment, n: usize, rng: &mut R) -> Option<(f64, usize)> {
    let nf = n as f64;
    let coal = nf * (nf - 1.0);
    let single = nf * env.sigma();
    let total = coal + single + env.total_mass();
    if total == 0.0 {
        return None;
    }
    let wait = rng.sample::<f64, _>(Exp1) / total;
    let u = rng.random::<f64>() * total;
    let next = if u < coal {
        n - 1
    } else if u < coal + single {
        n + 1
    } else {
        2 * n
    };
    Some((wait, next))
}

/// Simulates the chain from state 1 on `[0, horizon]` and returns time-occupation
/// fractions over `[burn_in, horizon]`, with standard errors from batch means.
pub fn simulate_line_count(env: &Environment, horizon: f64, burn_in: f64, seed: u64) -> Occupation {
    assert!(horizon > burn_in && burn_in >= 0.0, "need horizon > burn_in >= 0");
    let mut rng = mc::stream_rng(seed, 0);
    let batch_len = (horizon - burn_in) / OCCUPATION_BATCHES as f64;
    let mut batches: Vec<Vec<f64>> = vec![Vec::new(); OCCUPATION_BATCHES];
    let credit = |from: f64, to: f64, state: usize, batches: &mut Vec<Vec<f64>>| {
        let (from, to) = (from.max(burn_in), to.min(horizon));
        if to <= from {
            return;
        }
        let mut t = from;
        while t < to {
            let b = (((t - burn_in) / batch_len) as usize).min(OCCUPATION_BATCHES - 1);
            let end = (burn_in + (b + 1) as f64 * batch_len).min(to);
            let end = if b == OCCUPATION_BATCHES - 1 { to } else { end };
            let slot = &mut batches[b];
            if slot.len() < state {
                slot.resize(state, 0.0);
            }
            slot[state - 1] += end - t;
            t = end;
        }
    };
    let (mut t, mut n, mut events) = (0.0, 1usize, 0u64);
    while t < horizon {
        match line_count_jump(env, n, &mut rng) {
            Some((wait, next)) => {
                credit(t, t + wait, n, &mut batches);
                t += wait;
                n = next;
                events += 1;
            }
            None => {
                credit(t, horizon, n, &mut batches);
                t = horizon;
            }
        }
    }
    let width = batches.iter().map(Vec::len).max().unwrap_or(0);
    let mut fractions = vec![0.0; width];
    let mut std_errors = vec![0.0; width];
    for k in 0..width {
        let mut mv = MeanVar::default();
        for b in &batches {
            mv.push(b.get(k).copied().unwrap_or(0.0) / batch_len);
        }
        fractions[k] = mv.mean();
        std_errors[k] = mv.std_error();
    }
    Occupation {
        fractions,
        std_errors,
        events,
    }
}

/// Monte Carlo estimate of `P_m(|V_t| = k)` for the line count at a fixed time.
pub fn transient_line_count(
    env: &Environment,
    m: usize,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Occupation {
    let per_stream = mc::run_streams(n_samples, seed, mc::DEFAULT_STREAMS, |rng, count| {
        let mut hist: Vec<u64> = Vec::new();
        for _ in 0..count {
            let (mut s, mut n) = (0.0, m);
            while let Some((wait, next)) = line_count_jump(env, n, rng) {
                s += wait;
                if s > t {
                    break;
                }
                n = next;
            }
            if hist.len() < n {
                hist.resize(n, 0);
            }
            hist[n - 1] += 1;
        }
        hist
    });
    let width = per_stream.iter().map(Vec::len).max().unwrap_or(0);
    let mut counts = vec![0u64; width];
    for h in &per_stream {
        for (c, v) in counts.iter_mut().zip(h) {
            *c += v;
        }
    }
    let total = n_samples.max(1) as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let std_errors = fractions.iter().map(|p| (p * (1.0 - p) / total).sqrt()).collect();
    Occupation {
        fractions,
        std_errors,
        events: n_samples as u64,
    }
}

/// Absorption-at-1 estimate for the Siegmund dual chain.
#[derive(Debug, Clone, Copy)]
pub struct SiegmundEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// Fraction of runs that climbed past `cap` and were counted as not absorbed.
    pub escape_fraction: f64,
    /// Upper bound on the downward bias from the cap rule.
    pub cap_bias: f64,
}

/// Simulates the dual chain `D` (rates `i -> i+1` at `i(i-1)`, `i -> i-1` at
/// `sigma (i-1)`, `i -> floor((i+1)/2)` at `lambda`) from `d` and estimates
/// `P(D hits 1) = pi([d, inf))`. Runs exceeding `cap` count as escaped.
pub fn siegmund_absorption(
    env: &Environment,
    d: usize,
    cap: usize,
    n_samples: usize,
    seed: u64,
) -> SiegmundEstimate {
    assert!(d >= 1 && cap > d, "need d >= 1 and cap > d");
    let sigma = env.sigma();
    let lambda = env.total_mass();
    let per_stream = mc::run_streams(n_samples, seed, mc::DEFAULT_STREAMS, |rng, count| {
        let (mut absorbed, mut escaped) = (0u64, 0u64);
        for _ in 0..count {
            let mut state = d;
            loop {
                if state == 1 {
                    absorbed += 1;
                    break;
                }
                if state > cap {
                    escaped += 1;
                    break;
                }
                let i = state as f64;
                let up = i * (i - 1.0);
                let down = sigma * (i - 1.0);
                let u = rng.random::<f64>() * (up + down + lambda);
                state = if u < up {
                    state + 1
                } else if u < up + down {
                    state - 1
                } else {
                    state.div_ceil(2)
                };
            }
        }
        (absorbed, escaped)
    });
    let (absorbed, escaped) = per_stream
        .iter()
        .fold((0u64, 0u64), |(a, e), (x, y)| (a + x, e + y));
    let n = n_samples.max(1) as f64;
    let p = absorbed as f64 / n;
    SiegmundEstimate {
        estimate: p,
        std_error: (p * (1.0 - p) / n).sqrt(),
        escape_fraction: escaped as f64 / n,
        cap_bias: tail_bound(env, cap + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(sigma: f64, lambda: f64) -> Environment {
        if lambda == 0.0 {
            Environment::drift_only(sigma).unwrap()
        } else {
            Environment::single_atom(sigma, 0.1, lambda).unwrap()
        }
    }

    #[test]
    fn ratio_examples() {
        let r = unnormalized_ratios(&env(0.0, 0.0), 5);
        assert_eq!(r, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let r = unnormalized_ratios(&env(0.8, 0.8), 3);
        assert!((r[1] - 0.8).abs() < 1e-15);
        assert!((r[2] - 0.32).abs() < 1e-15);
    }

    #[test]
    fn tail_bound_examples() {
        let dead = env(0.0, 0.0);
        for k in 2..50 {
            assert_eq!(tail_bound(&dead, k), 0.0);
        }
        assert_eq!(tail_bound(&dead, 1), 1.0);
        for (s, l) in [(0.8, 0.8), (5.0, 5.0), (0.1, 0.0)] {
            let b = tail_bound(&env(s, l), 1);
            assert!(b <= 1.0 && b > 0.0);
        }
    }

    #[test]
    fn tail_bound_dominates_direct_sum() {
        // direct summation of the per-state bounds over a long range, no closing trick
        for (s, l) in [(0.8, 0.8), (2.0, 3.0), (0.3, 0.1)] {
            let e = env(s, l);
            for k in [4usize, 5, 9, 17, 64, 100] {
                let direct: f64 = (k..200_000).map(|j| state_bound(&e, j)).sum();
                let tb = tail_bound(&e, k);
                assert!(tb >= direct.min(1.0) * (1.0 - 1e-12), "k={k}: {tb} < {direct}");
                // the neglected range beyond 200000 is tiny, so the bound is not loose either
                assert!(tb <= direct.min(1.0) * 1.01 + 1e-300, "k={k}: {tb} vs {direct}");
            }
        }
    }

    #[test]
    fn tail_bound_monotone() {
        let e = env(0.8, 0.8);
        let mut prev = tail_bound(&e, 4);
        for k in 5..2000 {
            let b = tail_bound(&e, k);
            assert!(b <= prev * (1.0 + 1e-12), "k={k}");
            prev = b;
        }
    }

    #[test]
    fn compute_pi_examples() {
        let p = compute_pi(&env(0.0, 0.0), 4).unwrap();
        assert_eq!(p.pi, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.pi1_bracket.0, p.pi1_bracket.1);

        let p = compute_pi(&env(0.8, 0.8), 64).unwrap();
        assert_eq!(p.pi(2) / p.pi(1), 0.8);
        let eps = p.tail_upper;
        let mass: f64 = p.pi.iter().sum();
        assert!(mass <= 1.0 && mass >= 1.0 - 2.0 * eps);
        assert!(p.recursion_residual() <= 1e-12);
        assert!(p.pi.iter().all(|&v| v >= 0.0));
        assert!(1.0 - mass <= eps + 1e-12);
    }

    #[test]
    fn cutoff_too_small() {
        let e = env(5.0, 5.0);
        assert!(matches!(compute_pi(&e, 2), Err(Error::CutoffTooSmall { .. })));
    }

    #[test]
    fn large_cutoff_brackets_tightly() {
        let p = compute_pi(&env(0.8, 0.8), 1024).unwrap();
        assert!(p.pi1_bracket.1 - p.pi1_bracket.0 < 1e-9);
        assert!(p.tail_upper_from(65) < 1e-9);
        assert!(p.tail_upper_from(65) >= p.tail_estimate(65));
    }

    #[test]
    fn occupation_degenerate_chain() {
        let occ = simulate_line_count(&env(0.0, 0.0), 10.0, 1.0, 3);
        assert_eq!(occ.fraction(1), 1.0);
        assert_eq!(occ.events, 0);
    }

    #[test]
    fn siegmund_trivial_cases() {
        let e = env(0.8, 0.8);
        assert_eq!(siegmund_absorption(&e, 1, 10, 100, 1).estimate, 1.0);
        let dead = env(0.0, 0.0);
        let est = siegmund_absorption(&dead, 2, 10, 100, 1);
        assert_eq!(est.estimate, 0.0);
        assert_eq!(est.escape_fraction, 1.0);
    }
}
