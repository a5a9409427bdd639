//! Cross-checks between the deterministic routes and the Monte Carlo oracles
//! that go beyond the acceptance criteria.

use std::sync::OnceLock;

use wf_levy::easg::{self, EasgState};
use wf_levy::fixation::{unit_grid, TaylorCoefficients};
use wf_levy::mc;
use wf_levy::odes::{self, StepPolicy, Stabilization};
use wf_levy::sde;
use wf_levy::stationary;
use wf_levy::validate::{reference_env, Mode, Suite, REFERENCE_JUMPS};
use wf_levy::Environment;

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| Suite::new(Mode::Full, 7))
}

#[test]
fn grid_entries_respect_the_line_count_envelope() {
    let env = reference_env(0.1);
    let cutoff = 32;
    for t in [0.25, 0.5, 1.0, 2.0, 5.0] {
        let grid = odes::integrate_r(&env, cutoff, 1, 1, t, StepPolicy::default()).unwrap();
        let p = odes::line_count_distribution(&env, cutoff, 1, t, StepPolicy::default()).unwrap();
        for k in 1..=cutoff / 2 {
            for j in 1..=k.min(6) {
                let factorial: f64 = (1..=j).map(|v| v as f64).product();
                let envelope = (j as f64 * k as f64).powi(j as i32) / factorial * p[k - 1];
                let v = grid.get(k, j).abs();
                assert!(v <= 1.1 * envelope + 1e-15, "t={t} ({k},{j}): {v:e} > {envelope:e}");
            }
        }
    }
}

#[test]
fn grid_row_sums_match_simulated_line_counts() {
    let env = reference_env(0.2);
    for (s, t) in [0.5, 1.0].into_iter().enumerate() {
        let grid = odes::integrate_r(&env, 32, 1, 1, t, StepPolicy::default()).unwrap();
        let occ = stationary::transient_line_count(&env, 1, t, 100_000, 40 + s as u64);
        for k in 1..=6 {
            let gap = (grid.row_sum(k) - occ.fraction(k)).abs();
            assert!(gap <= 3.0 * occ.std_error(k) + 1e-12, "t={t} k={k}: gap {gap:e}");
        }
    }
}

#[test]
fn grid_mass_is_bounded_by_the_leak() {
    let env = reference_env(0.3);
    let cutoff = 32;
    let pi = stationary::compute_pi(&env, 1024).unwrap();
    for t in [0.5, 2.0, 10.0] {
        let grid = odes::integrate_r(&env, cutoff, 1, 1, t, StepPolicy::default()).unwrap();
        let mass: f64 = grid.values.iter().sum();
        // leaving the lattice requires more than K/2 lines; bound that probability by the stationary tail
        let rate = env.total_mass() + cutoff as f64 * env.sigma();
        let eps = rate * t * pi.tail_upper_from(cutoff / 2 + 1) / pi.pi1_bracket.0;
        assert!(mass <= 1.0 + 1e-9 && mass >= 1.0 - eps, "t={t}: mass {mass}, eps {eps:e}");
    }
}

#[test]
fn series_and_taylor_routes_agree_near_zero() {
    for (g, a) in suite().reference_grids().iter().zip(REFERENCE_JUMPS) {
        let b = odes::extract_b_ode(&g.env, 16, StepPolicy::default(), Stabilization::default()).unwrap();
        // spread of b over several Q-system cutoffs, an empirical truncation error
        let spread: Vec<f64> = {
            let runs: Vec<_> = [8, 10, 12, 14, 16]
                .iter()
                .filter_map(|&j| odes::extract_b_ode(&g.env, j, StepPolicy::default(), Stabilization::default()).ok())
                .collect();
            (1..=7)
                .map(|j| {
                    let vals = runs.iter().map(|r| r.b(j));
                    vals.clone().fold(f64::MIN, f64::max) - vals.fold(f64::MAX, f64::min)
                })
                .collect()
        };
        let taylor = TaylorCoefficients::absolute(b.b.clone());
        for x in [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3] {
            let (h, err) = g.series.h_series(x);
            let t = taylor.h_taylor(x, 7).unwrap();
            let tail: f64 = (8..=16).map(|j| b.b(j).abs() * x.powi(j as i32)).sum();
            let cutoff: f64 = (1..=7).map(|j| spread[j - 1] * x.powi(j as i32)).sum();
            // 1e-6 absorbs the slow leak of the truncated grid
            assert!((h - t).abs() <= err + tail + cutoff + 1e-6, "a={a} x={x}: {h} vs {t}");
        }
    }
}

#[test]
fn series_is_monotone() {
    for (g, a) in suite().reference_grids().iter().zip(REFERENCE_JUMPS) {
        let values: Vec<(f64, f64)> = unit_grid(101).into_iter().map(|x| g.series.h_series(x)).collect();
        for w in values.windows(2) {
            assert!(w[1].0 >= w[0].0 - w[0].1, "a={a}");
        }
        assert_eq!(values[0].0, 0.0);
    }
}

#[test]
fn drift_only_series_matches_closed_form() {
    let g = &suite().reference_grids()[0];
    for x in unit_grid(21) {
        let (h, err) = g.series.h_series(x);
        let exact = wf_levy::closed_form_no_env(x, 0.8);
        assert!((h - exact).abs() <= err + 1e-6, "x={x}");
    }
}

#[test]
fn limit_grid_reproduces_absolute_b() {
    let g = &suite().reference_grids()[1];
    let b = odes::extract_b_ode(&g.env, 16, StepPolicy::default(), Stabilization::default()).unwrap();
    let diag = odes::relation_residuals(&g.env, &g.limit.grid, &b.b[..7]);
    assert!(diag.max_b_vs_a() < 1e-5, "{:?}", diag.b_vs_a);
    assert!(diag.max_b_residual() < 1e-6);
}

#[test]
fn type_assignment_estimates_the_graph_polynomial() {
    let env = reference_env(0.2);
    let mut rng = mc::stream_rng(99, 0);
    let draws = 10_000;
    for _ in 0..50 {
        let st = easg::run_to(&env, 2, 1, 2.0, easg::DEFAULT_CAP, &mut rng);
        if st.overflowed {
            continue;
        }
        for x in [0.25, 0.5, 0.75] {
            let exact = st.graph_polynomial(x);
            let hits = (0..draws).filter(|_| st.assign_types(x, &mut rng)).count() as f64 / draws as f64;
            let se = (exact * (1.0 - exact) / draws as f64).sqrt().max(1e-12);
            assert!((hits - exact).abs() <= 4.0 * se, "x={x}: {hits} vs {exact}");
        }
    }
}

#[test]
fn graph_line_counts_settle_on_the_stationary_law() {
    let env = reference_env(0.1);
    let pi = stationary::compute_pi(&env, 1024).unwrap();
    let runs = 40_000;
    let counts = mc::run_streams(runs, 5, mc::DEFAULT_STREAMS, |rng, count| {
        let mut hist = vec![0u64; easg::DEFAULT_CAP + 1];
        for _ in 0..count {
            let mut st = EasgState::init(1, 1, easg::DEFAULT_CAP);
            while st.t < 8.0 && !st.overflowed {
                st.step(&env, 8.0, rng);
                // keep the encoding small; only the line count matters here
                st.f.clear();
                st.f.insert(1, 1.0);
            }
            if !st.overflowed {
                hist[st.n] += 1;
            }
        }
        hist
    });
    let mut hist = [0u64; easg::DEFAULT_CAP + 1];
    for h in counts {
        hist.iter_mut().zip(h).for_each(|(a, b)| *a += b);
    }
    let used: u64 = hist.iter().sum();
    for k in 1..=5 {
        let p = hist[k] as f64 / used as f64;
        let se = (pi.pi(k) * (1.0 - pi.pi(k)) / used as f64).sqrt();
        assert!((p - pi.pi(k)).abs() <= 3.0 * se, "k={k}: {p} vs {}", pi.pi(k));
    }
}

#[test]
fn birth_death_occupation_matches_recursion() {
    let env = Environment::drift_only(0.8).unwrap();
    let pi = stationary::compute_pi(&env, 64).unwrap();
    let occ = stationary::simulate_line_count(&env, 200_000.0, 20.0, 17);
    for k in 1..=5 {
        assert!((occ.fraction(k) - pi.pi(k)).abs() <= 3.0 * occ.std_error(k), "k={k}");
    }
    let bracket = pi.pi1_bracket;
    assert!(occ.fraction(1) >= bracket.0 - 3.0 * occ.std_error(1));
    assert!(occ.fraction(1) <= bracket.1 + 3.0 * occ.std_error(1));
}

#[test]
fn halving_the_step_leaves_moments_unchanged() {
    let env = reference_env(0.1);
    let coarse = sde::estimate_moment(&env, 0.3, 2, 1.0, 40_000, 2e-3, 1).unwrap();
    let fine = sde::estimate_moment(&env, 0.3, 2, 1.0, 40_000, 1e-3, 2).unwrap();
    let se = coarse.std_error.hypot(fine.std_error);
    assert!((coarse.mean - fine.mean).abs() <= 3.0 * se);
}

#[test]
fn neutral_and_martingale_paths_keep_their_mean() {
    let neutral = Environment::drift_only(0.0).unwrap();
    let martingale = wf_levy::validate::martingale_env();
    for env in [neutral, martingale] {
        let est = sde::estimate_moments(&env, 0.35, &[1], &[0.5, 2.0], 40_000, 1e-3, 3).unwrap();
        for e in est {
            assert!((e.mean - 0.35).abs() <= 3.0 * e.std_error, "{e:?}");
        }
    }
}
