//! The enlarged ancestral selection graph and its signed encoding function.
//!
//! Lines occupy slots `0..n`. The encoding function `F` maps nonempty sets
//! of current lines (bit masks over slots) to reals. At time 0 it is the
//! indicator of the first `i` lines among `m`, and it is updated in place at
//! every event:
//!
//! * coalescence of slots `a < b`: slot `b` merges into `a`, higher slots
//!   shift down, and `F'(A)` sums `F(B)` over every `B` whose image is `A`;
//! * multiple branching with weight `S`: every line `s` splits into a
//!   continuing line (slot `s`) and an incoming line (slot `n + s`), and
//!   `F'(A) = F(P(A)) (1 + S 1{S<0})^alpha (S 1{S>0})^beta (-S)^gamma`;
//! * single branching of line `s` with weight -1: the incoming line takes
//!   slot `n`, and `F'(A) = F(P(A))` when `A` holds both or neither son.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::Exp1;

use crate::env::Environment;
use crate::mc;

pub const DEFAULT_CAP: usize = 20;
/// Masks are `u32`, so no configuration may hold more lines than this.
pub const MAX_CAP: usize = 31;

pub type Encoding = BTreeMap<u32, f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Coalescence { a: usize, b: usize },
    MultipleBranching { weight: f64 },
    SingleBranching { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    /// Line count just before the event.
    pub lines_before: usize,
    pub kind: EventKind,
}

impl EventRecord {
    pub fn weight(&self) -> f64 {
        match self.kind {
            EventKind::Coalescence { .. } => 0.0,
            EventKind::MultipleBranching { weight } => weight,
            EventKind::SingleBranching { .. } => -1.0,
        }
    }
}

/// `time kind args weight`, one event per line.
impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EventKind::Coalescence { a, b } => write!(f, "{} coalescence {a},{b} 0", self.time),
            EventKind::MultipleBranching { weight } => {
                write!(f, "{} multiple all {weight}", self.time)
            }
            EventKind::SingleBranching { line } => write!(f, "{} single {line} -1", self.time),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EasgState {
    pub n: usize,
    pub cap: usize,
    pub m: usize,
    pub i: usize,
    pub f: Encoding,
    pub t: f64,
    pub log: Vec<EventRecord>,
    pub overflowed: bool,
}

fn full_mask(n: usize) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

fn insert_nonzero(map: &mut Encoding, key: u32, value: f64) {
    if value != 0.0 {
        *map.entry(key).or_insert(0.0) += value;
    }
}

/// New encoding after slots `a < b` coalesce.
pub fn coalesce_encoding(f: &Encoding, a: usize, b: usize) -> Encoding {
    assert!(a < b, "coalescence needs a < b");
    let low = full_mask(b);
    let mut out = Encoding::new();
    for (&mask, &v) in f {
        let mut image = (mask & low) | ((mask >> (b + 1)) << b);
        if mask & (1 << b) != 0 {
            image |= 1 << a;
        }
        insert_nonzero(&mut out, image, v);
    }
    out.retain(|_, v| *v != 0.0);
    out
}

/// New encoding after all `n` lines branch with common weight `s`.
pub fn multiple_branching_encoding(f: &Encoding, n: usize, s: f64) -> Encoding {
    let continuing = 1.0 + if s < 0.0 { s } else { 0.0 };
    let incoming = if s > 0.0 { s } else { 0.0 };
    let both = -s;
    let options = [(true, false, continuing), (false, true, incoming), (true, true, both)];
    let mut out = Encoding::new();
    for (&parent, &v) in f {
        let mut partial = vec![(0u32, v)];
        for line in 0..n {
            if parent & (1 << line) == 0 {
                continue;
            }
            let mut next = Vec::with_capacity(partial.len() * 3);
            for &(mask, val) in &partial {
                for &(c, inc, factor) in &options {
                    if factor == 0.0 {
                        continue;
                    }
                    let mut m = mask;
                    if c {
                        m |= 1 << line;
                    }
                    if inc {
                        m |= 1 << (n + line);
                    }
                    next.push((m, val * factor));
                }
            }
            partial = next;
        }
        for (mask, val) in partial {
            insert_nonzero(&mut out, mask, val);
        }
    }
    out
}

/// New encoding after line `line` of `n` branches alone (incoming son at slot `n`).
pub fn single_branching_encoding(f: &Encoding, n: usize, line: usize) -> Encoding {
    f.iter()
        .map(|(&mask, &v)| {
            if mask & (1 << line) != 0 {
                (mask | (1 << n), v)
            } else {
                (mask, v)
            }
        })
        .collect()
}

impl EasgState {
    /// `m` lines with `F` the indicator of the first `i`.
    pub fn init(m: usize, i: usize, cap: usize) -> Self {
        assert!(cap <= MAX_CAP, "cap above {MAX_CAP} is not supported");
        assert!(1 <= i && i <= m && m <= cap, "need 1 <= i <= m <= cap");
        let mut f = Encoding::new();
        f.insert(full_mask(i), 1.0);
        Self {
            n: m,
            cap,
            m,
            i,
            f,
            t: 0.0,
            log: Vec::new(),
            overflowed: false,
        }
    }

    pub fn apply_coalescence(&mut self, a: usize, b: usize) {
        let (a, b) = (a.min(b), a.max(b));
        assert!(a != b && b < self.n, "invalid coalescing pair");
        self.f = coalesce_encoding(&self.f, a, b);
        self.log.push(EventRecord {
            time: self.t,
            lines_before: self.n,
            kind: EventKind::Coalescence { a, b },
        });
        self.n -= 1;
    }

    /// Returns false (and freezes the state) when the branching would exceed the cap.
    pub fn apply_multiple_branching(&mut self, s: f64) -> bool {
        if 2 * self.n > self.cap {
            self.overflowed = true;
            return false;
        }
        self.f = multiple_branching_encoding(&self.f, self.n, s);
        self.log.push(EventRecord {
            time: self.t,
            lines_before: self.n,
            kind: EventKind::MultipleBranching { weight: s },
        });
        self.n *= 2;
        true
    }

    pub fn apply_single_branching(&mut self, line: usize) -> bool {
        assert!(line < self.n, "invalid branching line");
        if self.n + 1 > self.cap {
            self.overflowed = true;
            return false;
        }
        self.f = single_branching_encoding(&self.f, self.n, line);
        self.log.push(EventRecord {
            time: self.t,
            lines_before: self.n,
            kind: EventKind::SingleBranching { line },
        });
        self.n += 1;
        true
    }

    /// Total event rate `n(n-1) + n sigma + lambda`.
    pub fn total_rate(&self, env: &Environment) -> f64 {
        let n = self.n as f64;
        n * (n - 1.0) + n * env.sigma() + env.total_mass()
    }

    /// Samples the next event and applies it if it happens before `horizon`.
    /// Returns false when nothing happens before `horizon` (time is then set
    /// to `horizon`) or the state is frozen.
    pub fn step<R: Rng + ?Sized>(&mut self, env: &Environment, horizon: f64, rng: &mut R) -> bool {
        if self.overflowed {
            return false;
        }
        let rate = self.total_rate(env);
        if rate == 0.0 {
            self.t = self.t.max(horizon);
            return false;
        }
        let wait = rng.sample::<f64, _>(Exp1) / rate;
        if self.t + wait >= horizon {
            self.t = horizon;
            return false;
        }
        self.t += wait;
        let n = self.n as f64;
        let coal = n * (n - 1.0);
        let single = n * env.sigma();
        let u = rng.random::<f64>() * rate;
        if u < coal {
            let a = rng.random_range(0..self.n);
            let mut b = rng.random_range(0..self.n - 1);
            if b >= a {
                b += 1;
            }
            self.apply_coalescence(a, b);
            true
        } else if u < coal + single {
            let line = rng.random_range(0..self.n);
            self.apply_single_branching(line)
        } else {
            let s = env.sample_jump(rng);
            self.apply_multiple_branching(s)
        }
    }

    /// `sum_A F(A) x^|A|`.
    pub fn graph_polynomial(&self, x: f64) -> f64 {
        self.f
            .iter()
            .map(|(&mask, &v)| v * x.powi(mask.count_ones() as i32))
            .sum()
    }

    /// `sum_{|A| = j} F(A)` for `j = 1..=n` (index `j - 1`).
    pub fn size_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (&mask, &v) in &self.f {
            out[mask.count_ones() as usize - 1] += v;
        }
        out
    }

    /// Draws terminal types (type 0 with probability `x`), propagates them back
    /// through the log and reports whether the first `i` initial lines all end
    /// up with type 0.
    pub fn assign_types<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> bool {
        // true = type 0
        let mut types: Vec<bool> = (0..self.n).map(|_| rng.random::<f64>() < x).collect();
        for ev in self.log.iter().rev() {
            match ev.kind {
                EventKind::Coalescence { a, b } => {
                    types.insert(b, types[a]);
                }
                EventKind::MultipleBranching { weight } => {
                    let n = ev.lines_before;
                    let incoming = types.split_off(n);
                    let real_type = weight > 0.0;
                    for (c, inc) in types.iter_mut().zip(incoming) {
                        if rng.random::<f64>() < weight.abs() && inc == real_type {
                            *c = real_type;
                        }
                    }
                }
                EventKind::SingleBranching { line } => {
                    let inc = types.pop().expect("incoming line present");
                    // weight -1: a real branching that favors type 1
                    if !inc {
                        types[line] = false;
                    }
                }
            }
        }
        types[..self.i].iter().all(|&t| t)
    }

    pub fn sum_f(&self) -> f64 {
        self.f.values().sum()
    }

    /// Largest `|F(A)| / |A|^|A|`.
    pub fn max_bound_ratio(&self) -> f64 {
        self.f
            .iter()
            .map(|(&mask, &v)| {
                let size = mask.count_ones() as i32;
                v.abs() / (size as f64).powi(size)
            })
            .fold(0.0, f64::max)
    }

    /// `sum_{A subset B} F(A)`.
    pub fn subset_sum(&self, b: u32) -> f64 {
        self.f
            .iter()
            .filter(|(&mask, _)| mask & !b == 0)
            .map(|(_, &v)| v)
            .sum()
    }

    /// Worst violation of `0 <= sum_{A subset B} F(A) <= 1` over `samples`
    /// random nonempty `B`, plus `B` = all lines.
    pub fn subset_sum_violation<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> f64 {
        let all = full_mask(self.n);
        let mut worst: f64 = 0.0;
        let check = |b: u32| {
            let s = self.subset_sum(b);
            (-s).max(s - 1.0).max(0.0)
        };
        worst = worst.max(check(all));
        for _ in 0..samples {
            let b = rng.random::<u32>() & all;
            if b != 0 {
                worst = worst.max(check(b));
            }
        }
        worst
    }
}

/// Runs the graph from `init(m, i)` up to time `horizon` or until overflow.
pub fn run_to<R: Rng + ?Sized>(
    env: &Environment,
    m: usize,
    i: usize,
    horizon: f64,
    cap: usize,
    rng: &mut R,
) -> EasgState {
    let mut state = EasgState::init(m, i, cap);
    while state.t < horizon && !state.overflowed {
        state.step(env, horizon, rng);
    }
    state
}

/// Replays `events` on an encoding over `n` lines.
pub fn replay(mut f: Encoding, mut n: usize, events: &[EventRecord]) -> (Encoding, usize) {
    for ev in events {
        debug_assert_eq!(ev.lines_before, n);
        match ev.kind {
            EventKind::Coalescence { a, b } => {
                f = coalesce_encoding(&f, a, b);
                n -= 1;
            }
            EventKind::MultipleBranching { weight } => {
                f = multiple_branching_encoding(&f, n, weight);
                n *= 2;
            }
            EventKind::SingleBranching { line } => {
                f = single_branching_encoding(&f, n, line);
                n += 1;
            }
        }
    }
    (f, n)
}

/// Splits the log at `split_time`, recomputes the final encoding as
/// `sum_B F_split(B) f(B, .)` with `f(B, .)` the suffix replayed from the
/// indicator of `B`, and returns the largest discrepancy with the stored `F`.
pub fn compose_check(state: &EasgState, split_time: f64) -> f64 {
    let cut = state.log.partition_point(|ev| ev.time <= split_time);
    let mut init = Encoding::new();
    init.insert(full_mask(state.i), 1.0);
    let (f_split, n_split) = replay(init, state.m, &state.log[..cut]);
    let suffix = &state.log[cut..];
    let mut composite = Encoding::new();
    for (&b, &weight) in &f_split {
        let mut indicator = Encoding::new();
        indicator.insert(b, 1.0);
        let (f_b, _) = replay(indicator, n_split, suffix);
        for (mask, v) in f_b {
            *composite.entry(mask).or_insert(0.0) += weight * v;
        }
    }
    let mut worst: f64 = 0.0;
    for (mask, v) in &composite {
        worst = worst.max((v - state.f.get(mask).copied().unwrap_or(0.0)).abs());
    }
    for (mask, v) in &state.f {
        if !composite.contains_key(mask) {
            worst = worst.max(v.abs());
        }
    }
    worst
}

/// Monte Carlo estimates of `R_T^{m,k}(i, j)` and `Q_T(i, j)`.
#[derive(Debug, Clone)]
pub struct DualityEstimate {
    pub cap: usize,
    /// Runs that finished below the cap and entered the averages.
    pub used: usize,
    pub overflow_fraction: f64,
    /// `r_mean[k][j]`, `1 <= j <= k <= cap`; other entries are 0.
    pub r_mean: Vec<Vec<f64>>,
    pub r_se: Vec<Vec<f64>>,
    /// `q_mean[j]`, `1 <= j <= cap`.
    pub q_mean: Vec<f64>,
    pub q_se: Vec<f64>,
}

#[derive(Clone)]
struct Moments {
    used: usize,
    overflowed: usize,
    r_sum: Vec<Vec<f64>>,
    r_sq: Vec<Vec<f64>>,
    q_sum: Vec<f64>,
    q_sq: Vec<f64>,
}

impl Moments {
    fn new(cap: usize) -> Self {
        Self {
            used: 0,
            overflowed: 0,
            r_sum: vec![vec![0.0; cap + 1]; cap + 1],
            r_sq: vec![vec![0.0; cap + 1]; cap + 1],
            q_sum: vec![0.0; cap + 1],
            q_sq: vec![0.0; cap + 1],
        }
    }

    fn merge(&mut self, other: &Moments) {
        self.used += other.used;
        self.overflowed += other.overflowed;
        for (a, b) in self.r_sum.iter_mut().zip(&other.r_sum) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.r_sq.iter_mut().zip(&other.r_sq) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.q_sum.iter_mut().zip(&other.q_sum).for_each(|(x, y)| *x += y);
        self.q_sq.iter_mut().zip(&other.q_sq).for_each(|(x, y)| *x += y);
    }
}

fn mean_se(sum: f64, sq: f64, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 {
        ((sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    (mean, (var / nf).sqrt())
}

pub fn estimate_duality_coeffs(
    env: &Environment,
    m: usize,
    i: usize,
    horizon: f64,
    n_samples: usize,
    seed: u64,
    cap: usize,
) -> DualityEstimate {
    let parts = mc::run_streams(n_samples, seed, mc::DEFAULT_STREAMS, |rng, count| {
        let mut acc = Moments::new(cap);
        for _ in 0..count {
            let state = run_to(env, m, i, horizon, cap, rng);
            if state.overflowed {
                acc.overflowed += 1;
                continue;
            }
            acc.used += 1;
            let k = state.n;
            for (idx, s) in state.size_sums().into_iter().enumerate() {
                let j = idx + 1;
                acc.r_sum[k][j] += s;
                acc.r_sq[k][j] += s * s;
                acc.q_sum[j] += s;
                acc.q_sq[j] += s * s;
            }
        }
        acc
    });
    let mut total = Moments::new(cap);
    for p in &parts {
        total.merge(p);
    }
    let mut r_mean = vec![vec![0.0; cap + 1]; cap + 1];
    let mut r_se = r_mean.clone();
    for k in 1..=cap {
        for j in 1..=k {
            let (mu, se) = mean_se(total.r_sum[k][j], total.r_sq[k][j], total.used);
            r_mean[k][j] = mu;
            r_se[k][j] = se;
        }
    }
    let (mut q_mean, mut q_se) = (vec![0.0; cap + 1], vec![0.0; cap + 1]);
    for j in 1..=cap {
        let (mu, se) = mean_se(total.q_sum[j], total.q_sq[j], total.used);
        q_mean[j] = mu;
        q_se[j] = se;
    }
    DualityEstimate {
        cap,
        used: total.used,
        overflow_fraction: total.overflowed as f64 / n_samples.max(1) as f64,
        r_mean,
        r_se,
        q_mean,
        q_se,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::binomial;
    use proptest::prelude::*;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        mc::stream_rng(seed, 0)
    }

    fn entry(f: &Encoding, lines: &[usize]) -> f64 {
        let mask = lines.iter().fold(0u32, |m, &l| m | (1 << l));
        f.get(&mask).copied().unwrap_or(0.0)
    }

    #[test]
    fn init_examples() {
        let s = EasgState::init(1, 1, DEFAULT_CAP);
        assert_eq!(entry(&s.f, &[0]), 1.0);
        let s = EasgState::init(3, 2, DEFAULT_CAP);
        assert_eq!(s.f.len(), 1);
        assert_eq!(entry(&s.f, &[0, 1]), 1.0);
    }

    #[test]
    fn coalescence_examples() {
        let mut s = EasgState::init(2, 2, DEFAULT_CAP);
        s.apply_coalescence(0, 1);
        assert_eq!(s.n, 1);
        assert_eq!(entry(&s.f, &[0]), 1.0);
        let mut s = EasgState::init(2, 1, DEFAULT_CAP);
        s.apply_coalescence(1, 0);
        assert_eq!(entry(&s.f, &[0]), 1.0);
        // untouched subset is relabeled with its value
        let mut f = Encoding::new();
        f.insert(0b1000, 0.3);
        let g = coalesce_encoding(&f, 0, 2);
        assert_eq!(g.get(&0b100), Some(&0.3));
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn multiple_branching_examples() {
        let mut s = EasgState::init(1, 1, DEFAULT_CAP);
        s.apply_multiple_branching(0.1);
        assert_eq!(entry(&s.f, &[0]), 1.0);
        assert_eq!(entry(&s.f, &[1]), 0.1);
        assert!((entry(&s.f, &[0, 1]) + 0.1).abs() < 1e-15);
        let mut s = EasgState::init(1, 1, DEFAULT_CAP);
        s.apply_multiple_branching(-0.3);
        assert!((entry(&s.f, &[0]) - 0.7).abs() < 1e-15);
        assert_eq!(entry(&s.f, &[1]), 0.0);
        assert!((entry(&s.f, &[0, 1]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_branching_examples() {
        let mut s = EasgState::init(1, 1, DEFAULT_CAP);
        s.apply_single_branching(0);
        assert_eq!(entry(&s.f, &[0, 1]), 1.0);
        assert_eq!(s.f.len(), 1);
        let mut s = EasgState::init(2, 1, DEFAULT_CAP);
        s.apply_single_branching(1);
        assert_eq!(entry(&s.f, &[0]), 1.0);
        assert_eq!(s.f.len(), 1);
        assert!(single_branching_encoding(&Encoding::new(), 3, 1).is_empty());
    }

    #[test]
    fn overflow_freezes() {
        let mut s = EasgState::init(3, 1, 5);
        let before = s.f.clone();
        assert!(!s.apply_multiple_branching(0.2));
        assert!(s.overflowed);
        assert_eq!(s.f, before);
        let env = Environment::single_atom(0.0, 0.1, 1.0).unwrap();
        assert!(!s.step(&env, 10.0, &mut rng(1)));
    }

    #[test]
    fn graph_polynomial_examples() {
        let mut s = EasgState::init(1, 1, DEFAULT_CAP);
        s.apply_multiple_branching(0.1);
        assert!((s.graph_polynomial(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(s.graph_polynomial(0.0), 0.0);
        assert!((s.graph_polynomial(0.5) - 0.525).abs() < 1e-15);
    }

    #[test]
    fn assign_types_on_one_branching() {
        let mut s = EasgState::init(1, 1, DEFAULT_CAP);
        s.apply_multiple_branching(0.1);
        let mut r = rng(7);
        assert!((0..100).all(|_| s.assign_types(1.0, &mut r)));
        assert!((0..100).all(|_| !s.assign_types(0.0, &mut r)));
        let n = 200_000;
        let hits = (0..n).filter(|_| s.assign_types(0.5, &mut r)).count() as f64 / n as f64;
        let se = (0.525f64 * 0.475 / n as f64).sqrt();
        assert!((hits - 0.525).abs() < 4.0 * se, "{hits}");
    }

    #[test]
    fn run_to_examples() {
        let env = Environment::single_atom(0.8, 0.1, 0.8).unwrap();
        let s = run_to(&env, 2, 1, 0.0, DEFAULT_CAP, &mut rng(1));
        assert_eq!(s.n, 2);
        assert!(s.log.is_empty());
        let dead = Environment::drift_only(0.0).unwrap();
        let s = run_to(&dead, 5, 3, 1e3, DEFAULT_CAP, &mut rng(2));
        assert_eq!(s.n, 1);
        assert!((entry(&s.f, &[0]) - 1.0).abs() < 1e-12);
        let wild = Environment::single_atom(0.0, 0.5, 200.0).unwrap();
        let overflowed = (0..50)
            .filter(|&seed| run_to(&wild, 1, 1, 5.0, DEFAULT_CAP, &mut rng(seed)).overflowed)
            .count();
        assert!(overflowed > 0);
    }

    #[test]
    fn single_jump_size_sums_follow_binomial_law() {
        for i in 1..=3usize {
            for s in [0.1, -0.3, 0.45, -0.8] {
                let mut st = EasgState::init(i, i, DEFAULT_CAP);
                st.apply_multiple_branching(s);
                let sums = st.size_sums();
                for j in 1..=2 * i {
                    let expect = if j < i {
                        0.0
                    } else {
                        binomial(i, j - i)
                            * (1.0 + s).powi((2 * i - j) as i32)
                            * (-s).powi((j - i) as i32)
                    };
                    assert!((sums[j - 1] - expect).abs() < 1e-12, "i={i} s={s} j={j}");
                }
            }
        }
    }

    #[test]
    fn compose_trivial_splits() {
        let env = Environment::new(0.8, [(0.1, 0.5), (-0.4, 0.3)]).unwrap();
        let s = run_to(&env, 2, 1, 2.0, DEFAULT_CAP, &mut rng(11));
        assert_eq!(compose_check(&s, -1.0), 0.0);
        assert_eq!(compose_check(&s, 10.0), 0.0);
    }

    #[test]
    fn duality_at_time_zero() {
        let env = Environment::single_atom(0.8, 0.1, 0.8).unwrap();
        let est = estimate_duality_coeffs(&env, 3, 2, 0.0, 100, 1, DEFAULT_CAP);
        assert_eq!(est.r_mean[3][2], 1.0);
        assert_eq!(est.q_mean[2], 1.0);
        assert_eq!(est.r_mean[2][2], 0.0);
        assert_eq!(est.overflow_fraction, 0.0);
    }

    #[test]
    fn event_dump_format() {
        let mut s = EasgState::init(2, 1, DEFAULT_CAP);
        s.apply_single_branching(1);
        s.apply_coalescence(0, 2);
        let lines: Vec<String> = s.log.iter().map(|e| e.to_string()).collect();
        assert_eq!(lines, vec!["0 single 1 -1", "0 coalescence 0,2 0"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn invariants_hold_along_random_graphs(seed in any::<u64>(), sigma in 0.0..1.5f64, z in -0.9..0.9f64, lambda in 0.05..1.5f64) {
            prop_assume!(z.abs() > 1e-3);
            let env = Environment::single_atom(sigma, z, lambda).unwrap();
            let mut r = rng(seed);
            let mut st = EasgState::init(2, 1, 12);
            while st.t < 3.0 && !st.overflowed {
                st.step(&env, 3.0, &mut r);
                prop_assert!((st.sum_f() - 1.0).abs() < 1e-9);
                prop_assert!(st.max_bound_ratio() <= 1.0 + 1e-12);
                prop_assert!(st.subset_sum_violation(50, &mut r) <= 1e-9);
                let g = st.graph_polynomial(0.4);
                prop_assert!((-1e-9..=1.0 + 1e-9).contains(&g));
            }
            let split = st.t * 0.5;
            prop_assert!(compose_check(&st, split) <= 1e-9);
        }
    }
}
