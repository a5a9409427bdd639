//! Numerical acceptance checks, shared by the integration tests and the
//! `validate` subcommand.
//!
//! Each check returns a [`CriterionReport`] with the measured quantities.
//! Expensive intermediate results (stabilized coefficient grids, large-cutoff
//! stationary laws) are computed once per [`Suite`] and reused.

use std::fmt;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::easg::{self, EasgState};
use crate::env::{binomial, Environment};
use crate::fixation::{self, closed_form_no_env, SeriesRepresentation, DEFAULT_DECAY_TOL};
use crate::mc;
use crate::odes::{self, ALimit, StepPolicy, Stabilization};
use crate::sde::{self, PathConfig};
use crate::stationary::{self, StationaryDistribution};

/// Jump sizes of the reference family `sigma = 0.8`, `nu = 0.8 delta_a`.
pub const REFERENCE_JUMPS: [f64; 4] = [0.0, 0.1, 0.2, 0.3];

/// Published Taylor coefficients `b_1..b_7` for the reference family, one row per jump size.
pub const REFERENCE_B: [[f64; 7]; 4] = [
    [0.6527730, 0.2611092, 0.0696291, 0.0139258, 0.0022281, 0.0002971, 0.0000340],
    [0.6830193, 0.2458870, 0.0586850, 0.0106059, 0.0015752, 0.0002021, 0.0000229],
    [0.7145930, 0.2286698, 0.0475633, 0.0078140, 0.0011734, 0.0001641, 0.0000201],
    [0.7473968, 0.2092711, 0.0365527, 0.0056493, 0.0009582, 0.0001497, 0.0000206],
];

pub const REFERENCE_SIGMA: f64 = 0.8;
pub const REFERENCE_LAMBDA: f64 = 0.8;

/// The reference environment for jump size `a`. A jump of size 0 does nothing,
/// so `a = 0` is the environment without jumps.
pub fn reference_env(a: f64) -> Environment {
    if a == 0.0 {
        Environment::drift_only(REFERENCE_SIGMA).expect("valid drift")
    } else {
        Environment::single_atom(REFERENCE_SIGMA, a, REFERENCE_LAMBDA).expect("valid atom")
    }
}

/// `int z nu(dz) = sigma`: the frequency is a martingale and `h(x) = x`.
pub fn martingale_env() -> Environment {
    Environment::single_atom(0.5, 0.5, 1.0).expect("valid atom")
}

/// Only negative jumps.
pub fn one_sided_env() -> Environment {
    Environment::single_atom(0.5, -0.3, 0.7).expect("valid atom")
}

pub const CRITERIA: usize = 13;
/// Cutoff of the coefficient grids.
pub const GRID_CUTOFF: usize = 64;
/// Cutoff of the stationary law used as the reference for `pi`.
pub const PI_CUTOFF: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    /// Monte Carlo sample sizes divided by ten; deterministic checks unchanged.
    Quick,
}

/// Criteria that need no stabilized coefficient grid; with [`Mode::Quick`]
/// they finish in seconds.
pub const QUICK_CRITERIA: [usize; 8] = [1, 2, 3, 4, 9, 10, 11, 13];

#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub measured: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.seconds,
            self.measured
        )
    }
}

pub fn title(id: usize) -> &'static str {
    match id {
        1 => "reference coefficients from normalized ratios",
        2 => "drift-only row against the closed form",
        3 => "second and third ratios against closed formulas",
        4 => "absolute coefficients from the Q-system",
        5 => "limit relations of the coefficient grid",
        6 => "series at x = 1",
        7 => "martingale environment",
        8 => "one-sided environment",
        9 => "stationary law against two Monte Carlo oracles",
        10 => "exact invariants of the encoding function",
        11 => "moment duality against path simulation",
        12 => "fixation probability against path simulation",
        13 => "graph estimates against the ODE coefficients",
        _ => "unknown",
    }
}

/// A grid stabilized at [`GRID_CUTOFF`] together with the stationary law of its environment.
pub struct GridBundle {
    pub env: Environment,
    pub limit: ALimit,
    pub pi: StationaryDistribution,
    pub series: SeriesRepresentation,
}

fn bundle(env: Environment) -> GridBundle {
    let limit = odes::extract_a(&env, GRID_CUTOFF, StepPolicy::default(), Stabilization::default())
        .expect("grid stabilizes");
    let pi = stationary::compute_pi(&env, PI_CUTOFF).expect("large cutoff");
    let series = SeriesRepresentation::from_limit(&limit, &pi);
    GridBundle {
        env,
        limit,
        pi,
        series,
    }
}

/// Shared state for one validation run.
pub struct Suite {
    pub mode: Mode,
    pub seed: u64,
    reference: OnceLock<Vec<GridBundle>>,
    martingale: OnceLock<GridBundle>,
    one_sided: OnceLock<GridBundle>,
}

impl Suite {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            reference: OnceLock::new(),
            martingale: OnceLock::new(),
            one_sided: OnceLock::new(),
        }
    }

    /// Grids for the four reference environments, computed in parallel on first use.
    pub fn reference_grids(&self) -> &[GridBundle] {
        self.reference.get_or_init(|| {
            REFERENCE_JUMPS
                .par_iter()
                .map(|&a| bundle(reference_env(a)))
                .collect()
        })
    }

    pub fn martingale_grid(&self) -> &GridBundle {
        self.martingale.get_or_init(|| bundle(martingale_env()))
    }

    pub fn one_sided_grid(&self) -> &GridBundle {
        self.one_sided.get_or_init(|| bundle(one_sided_env()))
    }

    fn samples(&self, full: usize) -> usize {
        match self.mode {
            Mode::Full => full,
            Mode::Quick => (full / 10).max(1),
        }
    }

    pub fn run(&self, id: usize) -> CriterionReport {
        let start = Instant::now();
        let (passed, measured) = match id {
            1 => self.reference_table(),
            2 => self.closed_form_row(),
            3 => self.ratio_formulas(),
            4 => self.absolute_b(),
            5 => self.limit_relations(),
            6 => self.series_endpoint(),
            7 => self.martingale(),
            8 => self.one_sided(),
            9 => self.stationary_oracles(),
            10 => self.encoding_invariants(),
            11 => self.moment_duality(),
            12 => self.fixation_paths(),
            13 => self.graph_vs_ode(),
            _ => (false, format!("no criterion {id}")),
        };
        CriterionReport {
            id,
            title: title(id),
            passed,
            measured,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    pub fn run_all(&self) -> Vec<CriterionReport> {
        (1..=CRITERIA).map(|id| self.run(id)).collect()
    }

    fn reference_table(&self) -> (bool, String) {
        let start = Instant::now();
        let mut worst: f64 = 0.0;
        let mut truncations = Vec::new();
        for (row, &a) in REFERENCE_JUMPS.iter().enumerate() {
            let ratios = odes::b_ratios(&reference_env(a), 40);
            let Ok(b) = fixation::normalize_b(&ratios, None, DEFAULT_DECAY_TOL) else {
                return (false, format!("ratios for a = {a} do not decay"));
            };
            truncations.push(b.b.len());
            for j in 0..7 {
                worst = worst.max((b.b[j] - REFERENCE_B[row][j]).abs());
            }
        }
        let secs = start.elapsed().as_secs_f64();
        (
            worst <= 5e-7 && secs < 1.0,
            format!("max |err| = {worst:.2e} (tol 5e-7), truncations {truncations:?}, {secs:.3}s"),
        )
    }

    fn closed_form_row(&self) -> (bool, String) {
        let sigma = REFERENCE_SIGMA;
        let ratios = odes::b_ratios(&reference_env(0.0), 60);
        let Ok(b) = fixation::normalize_b(&ratios, None, 1e-17) else {
            return (false, "ratios do not decay".into());
        };
        let b1 = sigma / sigma.exp_m1();
        let mut fact = 1.0;
        let mut worst: f64 = 0.0;
        for (idx, v) in b.b.iter().enumerate() {
            let k = idx + 1;
            fact *= k as f64;
            worst = worst.max((v - sigma.powi(k as i32 - 1) / fact * b1).abs());
        }
        (worst <= 1e-12, format!("max |err| = {worst:.2e} over {} terms (tol 1e-12)", b.b.len()))
    }

    fn ratio_formulas(&self) -> (bool, String) {
        let mut rng = mc::stream_rng(self.seed ^ 0x3, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let sigma = rng.random_range(0.0..3.0);
            let atoms: Vec<(f64, f64)> = (0..rng.random_range(1..=4))
                .map(|_| {
                    let z: f64 = rng.random_range(-0.99..0.99);
                    (if z == 0.0 { 0.5 } else { z }, rng.random_range(0.01..2.0))
                })
                .collect();
            let env = Environment::new(sigma, atoms).expect("valid random environment");
            let r = odes::b_ratios(&env, 3);
            let (m1, m2) = (env.moment(1), env.moment(2));
            let r2 = (sigma - m1) / 2.0;
            let r3 = (2.0 * sigma - 2.0 * m1 - m2) * (sigma - m1) / 12.0;
            worst = worst.max((r[1] - r2).abs()).max((r[2] - r3).abs());
        }
        (worst <= 1e-12, format!("max |err| = {worst:.2e} over 20 environments (tol 1e-12)"))
    }

    fn absolute_b(&self) -> (bool, String) {
        let start = Instant::now();
        let results: Vec<_> = REFERENCE_JUMPS
            .par_iter()
            .map(|&a| {
                let env = reference_env(a);
                let lim = odes::extract_b_ode(&env, 16, StepPolicy::default(), Stabilization::default());
                let check = odes::b_truncation_check(
                    &env,
                    7,
                    StepPolicy::default(),
                    Stabilization::default(),
                    1e-7,
                );
                (lim, check)
            })
            .collect();
        let mut worst: f64 = 0.0;
        let mut stability = Vec::new();
        for (row, (lim, check)) in results.into_iter().enumerate() {
            let Ok(lim) = lim else {
                return (false, format!("Q-system for a = {} did not stabilize", REFERENCE_JUMPS[row]));
            };
            for j in 1..=7 {
                worst = worst.max((lim.b(j) - REFERENCE_B[row][j - 1]).abs());
            }
            stability.push(match check {
                Ok(c) => format!("{:.1e}", c.max_difference),
                Err(_) => "unstable".into(),
            });
        }
        let secs = start.elapsed().as_secs_f64();
        (
            worst <= 1e-4 && secs < 120.0,
            format!(
                "max |err| = {worst:.2e} (tol 1e-4); cutoff sensitivity J=11 vs 15: [{}]; {secs:.1}s",
                stability.join(", ")
            ),
        )
    }

    fn limit_relations(&self) -> (bool, String) {
        let g = &self.reference_grids()[1];
        let grid = &g.limit.grid;
        let diag = odes::relation_residuals(&g.env, grid, &[]);
        let residual = diag.max_a_residual(12);
        let row_err = (1..=12)
            .map(|k| (grid.row_sum(k) - g.pi.pi(k)).abs())
            .fold(0.0, f64::max);
        let corner = (grid.get(1, 1) - g.pi.pi(1)).abs();
        (
            residual <= 1e-5 && row_err <= 1e-6 && corner <= 1e-6,
            format!(
                "a = 0.1, K = {GRID_CUTOFF}: max residual {residual:.2e} (tol 1e-5), max |row sum - pi| {row_err:.2e}, |a(1,1) - pi(1)| {corner:.2e} (tol 1e-6); {:?} at t = {}",
                g.limit.report.kind, g.limit.report.t_final
            ),
        )
    }

    fn series_endpoint(&self) -> (bool, String) {
        let mut ok = true;
        let mut parts = Vec::new();
        for (g, a) in self.reference_grids().iter().zip(REFERENCE_JUMPS) {
            let (h, err) = g.series.h_series(1.0);
            ok &= h >= 1.0 - err - 1e-6 && h <= 1.0 + 1e-6;
            parts.push(format!("a={a}: 1-h={:.2e} bound={err:.2e}", 1.0 - h));
        }
        (ok, parts.join("; "))
    }

    fn martingale(&self) -> (bool, String) {
        let g = self.martingale_grid();
        let mut dev: f64 = 0.0;
        let mut err = 0.0;
        for x in fixation::unit_grid(101) {
            let (h, e) = g.series.h_series(x);
            dev = dev.max((h - x).abs());
            err = e;
        }
        let b = odes::extract_b_ode(&g.env, 16, StepPolicy::default(), Stabilization::default());
        let Ok(b) = b else {
            return (false, "Q-system did not stabilize".into());
        };
        let b_dev = (2..=7).map(|j| b.b(j).abs()).fold(0.0, f64::max);
        (
            dev <= err + 1e-4 && b_dev <= 1e-6,
            format!("max |h - x| = {dev:.2e} (bound {:.2e}), max |b_j|, 2<=j<=7 = {b_dev:.2e} (tol 1e-6), b_1 = {:.9}", err + 1e-4, b.b(1)),
        )
    }

    fn one_sided(&self) -> (bool, String) {
        let g = self.one_sided_grid();
        let min_a = g.limit.grid.values.iter().copied().fold(f64::INFINITY, f64::min);
        let b = odes::extract_b_ode(&g.env, 16, StepPolicy::default(), Stabilization::default());
        let Ok(b) = b else {
            return (false, "Q-system did not stabilize".into());
        };
        let min_b = b.b.iter().copied().fold(f64::INFINITY, f64::min);
        let total: f64 = b.b.iter().sum();
        (
            min_a >= -1e-9 && min_b >= -1e-9 && (total - 1.0).abs() <= 1e-4,
            format!("min a = {min_a:.2e}, min b = {min_b:.2e}, sum b = {total:.9} (tol 1e-4)"),
        )
    }

    fn stationary_oracles(&self) -> (bool, String) {
        let env = reference_env(0.1);
        let pi = stationary::compute_pi(&env, PI_CUTOFF).expect("large cutoff");
        // roughly 2.5 events per unit time near the bulk of the law
        let horizon = self.samples(1_000_000) as f64 / 2.5;
        let occ = stationary::simulate_line_count(&env, horizon, 50.0, self.seed ^ 0x9);
        let mut worst_occ: f64 = 0.0;
        let mut ok = true;
        for k in 1..=8 {
            let z = (occ.fraction(k) - pi.pi(k)).abs() / occ.std_error(k).max(f64::MIN_POSITIVE);
            worst_occ = worst_occ.max(z);
            ok &= (occ.fraction(k) - pi.pi(k)).abs() <= 3.0 * occ.std_error(k);
        }
        let mut worst_dual: f64 = 0.0;
        for d in 2..=6 {
            let est = stationary::siegmund_absorption(&env, d, 64, self.samples(200_000), self.seed ^ (0x90 + d as u64));
            let exact = pi.tail_estimate(d);
            let gap = (est.estimate - exact).abs();
            ok &= gap <= 3.0 * est.std_error + est.cap_bias;
            worst_dual = worst_dual.max(gap / est.std_error.max(f64::MIN_POSITIVE));
        }
        (
            ok,
            format!(
                "{} events: worst occupation |z| = {worst_occ:.2} (k <= 8); worst dual |z| = {worst_dual:.2} (d = 2..6); limit 3",
                occ.events
            ),
        )
    }

    fn encoding_invariants(&self) -> (bool, String) {
        let graphs = self.samples(10_000);
        let xs = [0.1, 0.3, 0.5, 0.7, 0.9];
        let mut ok = true;
        let mut parts = Vec::new();
        for &a in &REFERENCE_JUMPS {
            let env = reference_env(a);
            let per_stream = mc::run_streams(graphs, self.seed ^ 0xa0, mc::DEFAULT_STREAMS, |rng, count| {
                let (mut sum_dev, mut bound, mut poly_out, mut overflow): (f64, f64, f64, usize) = (0.0, 0.0, 0.0, 0);
                for _ in 0..count {
                    let mut st = EasgState::init(1, 1, easg::DEFAULT_CAP);
                    while st.t < 2.0 && !st.overflowed {
                        if st.step(&env, 2.0, rng) {
                            sum_dev = sum_dev.max((st.sum_f() - 1.0).abs());
                            bound = bound.max(st.max_bound_ratio());
                            for &x in &xs {
                                let g = st.graph_polynomial(x);
                                poly_out = poly_out.max((-g).max(g - 1.0));
                            }
                        }
                    }
                    overflow += usize::from(st.overflowed);
                }
                (sum_dev, bound, poly_out, overflow)
            });
            let (sum_dev, bound, poly_out, overflow) = per_stream.iter().fold((0.0f64, 0.0f64, 0.0f64, 0), |acc, p| {
                (acc.0.max(p.0), acc.1.max(p.1), acc.2.max(p.2), acc.3 + p.3)
            });
            let overflow_fraction = overflow as f64 / graphs as f64;
            ok &= sum_dev <= 1e-9 && bound <= 1.0 + 1e-12 && poly_out <= 1e-9 && overflow_fraction < 1e-3;
            parts.push(format!(
                "a={a}: |sum F - 1| {sum_dev:.1e}, max |F|/|A|^|A| {bound:.2}, polynomial excess {poly_out:.1e}, overflow {overflow_fraction:.1e}"
            ));
        }
        // one multiple branching from m = i lines
        let mut oracle: f64 = 0.0;
        for i in 1..=3usize {
            for &s in &[0.1, 0.2, 0.3, -0.5] {
                let mut st = EasgState::init(i, i, easg::DEFAULT_CAP);
                st.apply_multiple_branching(s);
                let sums = st.size_sums();
                for j in i..=2 * i {
                    let expect = binomial(i, j - i) * (1.0 + s).powi((2 * i - j) as i32) * (-s).powi((j - i) as i32);
                    oracle = oracle.max((sums[j - 1] - expect).abs());
                }
            }
        }
        ok &= oracle <= 1e-12;
        let env = reference_env(0.2);
        let mut rng = mc::stream_rng(self.seed ^ 0xa1, 0);
        let mut compose: f64 = 0.0;
        for _ in 0..100 {
            let st = easg::run_to(&env, 1, 1, 2.0, easg::DEFAULT_CAP, &mut rng);
            let split = rng.random::<f64>() * 2.0;
            compose = compose.max(easg::compose_check(&st, split));
        }
        ok &= compose <= 1e-9;
        parts.push(format!("single-jump oracle {oracle:.1e}, composition {compose:.1e}"));
        (ok, parts.join("; "))
    }

    fn moment_duality(&self) -> (bool, String) {
        let start = Instant::now();
        let env = reference_env(0.1);
        let paths = self.samples(100_000);
        let mut ok = true;
        let (mut worst_gap, mut worst_z): (f64, f64) = (0.0, 0.0);
        for (xi, &x) in [0.3, 0.7].iter().enumerate() {
            let est = sde::estimate_moments(&env, x, &[1, 2], &[0.5, 1.0], paths, 1e-3, self.seed ^ (0xb0 + xi as u64))
                .expect("valid arguments");
            for e in est {
                let l = e.l as usize;
                let grid = odes::integrate_r(&env, 32, l, l, e.t, StepPolicy::default()).expect("valid grid");
                let exact = grid.moment(x);
                let gap = (e.mean - exact).abs();
                ok &= gap <= 3.0 * e.std_error + 0.005;
                worst_gap = worst_gap.max(gap);
                worst_z = worst_z.max(gap / e.std_error);
            }
        }
        let secs = start.elapsed().as_secs_f64();
        ok &= secs < 300.0 || self.mode == Mode::Quick;
        (
            ok,
            format!("8 moments: max |gap| = {worst_gap:.2e}, max |z| = {worst_z:.2} (allowed 3 se + 5e-3), {paths} paths, {secs:.1}s"),
        )
    }

    fn fixation_paths(&self) -> (bool, String) {
        let paths = self.samples(10_000);
        let grids = self.reference_grids();
        let mut ok = true;
        let mut parts = Vec::new();
        for (row, label) in [(1usize, "a=0.1"), (0, "a=0")] {
            let g = &grids[row];
            for (xi, &x) in [0.25, 0.5, 0.75].iter().enumerate() {
                let cfg = PathConfig {
                    x0: x,
                    seed: self.seed ^ (0xc0 + 4 * row as u64 + xi as u64),
                    ..PathConfig::default()
                };
                let est = sde::estimate_fixation(&g.env, paths, &cfg).expect("valid config");
                let (h, err) = g.series.h_series(x);
                let budget = 3.0 * est.std_error + 0.01;
                ok &= (est.h - h).abs() <= budget + err;
                let mut line = format!("{label} x={x}: mc {:.4} vs series {h:.4}", est.h);
                if row == 0 {
                    let exact = closed_form_no_env(x, REFERENCE_SIGMA);
                    ok &= (est.h - exact).abs() <= budget;
                    line.push_str(&format!(" vs closed {exact:.4}"));
                }
                ok &= est.undecided_fraction < 1e-3;
                parts.push(line);
            }
        }
        (ok, parts.join("; "))
    }

    fn graph_vs_ode(&self) -> (bool, String) {
        let env = reference_env(0.1);
        let runs = self.samples(100_000);
        let est = easg::estimate_duality_coeffs(&env, 1, 1, 1.0, runs, self.seed ^ 0xd0, easg::DEFAULT_CAP);
        let grid = odes::integrate_r(&env, 32, 1, 1, 1.0, StepPolicy::default()).expect("valid grid");
        let q = odes::integrate_q(&env, 24, 1, 1.0, StepPolicy::default()).expect("valid vector");
        let (mut compared, mut worst, mut ok) = (0usize, 0.0f64, true);
        for k in 1..=easg::DEFAULT_CAP {
            for j in 1..=k {
                let exact = grid.get(k, j);
                if exact.abs() > 0.01 {
                    let z = (est.r_mean[k][j] - exact).abs() / est.r_se[k][j];
                    ok &= z <= 3.0;
                    worst = worst.max(z);
                    compared += 1;
                }
            }
        }
        for j in 1..=easg::DEFAULT_CAP {
            let exact = q.get(j);
            if exact.abs() > 0.01 {
                let z = (est.q_mean[j] - exact).abs() / est.q_se[j];
                ok &= z <= 3.0;
                worst = worst.max(z);
                compared += 1;
            }
        }
        (
            ok,
            format!("{compared} coefficients, worst |z| = {worst:.2} (limit 3), overflow {:.1e}", est.overflow_fraction),
        )
    }
}
