//! Fixation-probability evaluators: the series over line counts with a
//! certified truncation bound, Taylor partial sums, the normalization of
//! coefficient ratios, and the closed form without environment.

use std::fmt;

use crate::error::{Error, Result};
use crate::odes::{ALimit, CoefficientGrid};
use crate::stationary::StationaryDistribution;

/// `h(x) = sum_k P_k(x)` with `P_k(x) = sum_j a(k, j) x^j`, truncated at `K`.
#[derive(Debug, Clone)]
pub struct SeriesRepresentation {
    pub a: CoefficientGrid,
    pub cutoff: usize,
    /// Upper bound on `sum_{j > K} pi(j)`, the truncation error of the series.
    pub pi_tail: f64,
}

impl SeriesRepresentation {
    pub fn new(a: CoefficientGrid, pi_tail: f64) -> Self {
        Self {
            cutoff: a.cutoff,
            a,
            pi_tail,
        }
    }

    /// Builds the series from a stabilized grid, taking the tail bound from `pi`.
    pub fn from_limit(limit: &ALimit, pi: &StationaryDistribution) -> Self {
        Self::new(limit.grid.clone(), pi.tail_upper_from(limit.grid.cutoff + 1))
    }

    pub fn p_k(&self, k: usize, x: f64) -> f64 {
        self.a.row_polynomial(k, x)
    }

    /// `(sum_{k <= K} P_k(x), pi_tail)`.
    pub fn h_series(&self, x: f64) -> (f64, f64) {
        (self.a.moment(x), self.pi_tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientMode {
    /// Limits of the Q-system, carrying their true scale.
    Absolute,
    /// `b_j / b_1`; unusable for evaluation.
    Ratio,
    /// Ratios rescaled to sum to 1.
    Normalized,
}

#[derive(Debug, Clone)]
pub struct TaylorCoefficients {
    pub b: Vec<f64>,
    pub mode: CoefficientMode,
}

impl TaylorCoefficients {
    pub fn absolute(b: Vec<f64>) -> Self {
        Self {
            b,
            mode: CoefficientMode::Absolute,
        }
    }

    pub fn ratio(b: Vec<f64>) -> Self {
        Self {
            b,
            mode: CoefficientMode::Ratio,
        }
    }

    /// `sum_{k <= n} b_k x^k`.
    pub fn h_taylor(&self, x: f64, n: usize) -> Result<f64> {
        if self.mode == CoefficientMode::Ratio {
            return Err(Error::RatioModeUnusable);
        }
        if n > self.b.len() {
            return Err(Error::InvalidArgument(format!(
                "order {n} exceeds the {} available coefficients",
                self.b.len()
            )));
        }
        let mut p = 1.0;
        Ok(self.b[..n]
            .iter()
            .map(|b| {
                p *= x;
                b * p
            })
            .sum())
    }
}

/// `(e^(sigma x) - 1) / (e^sigma - 1)`, and `x` at `sigma = 0`.
pub fn closed_form_no_env(x: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        x
    } else {
        (sigma * x).exp_m1() / sigma.exp_m1()
    }
}

/// Why a ratio sequence was judged not to decay.
#[derive(Debug, Clone)]
pub struct DivergenceReport {
    pub len: usize,
    pub decay_tol: f64,
    pub max_abs: f64,
    /// Smallest `|ratio(j)| / max_abs` and the `j` where it occurs.
    pub min_relative: f64,
    pub argmin: usize,
    pub last: f64,
}

impl fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "over {} ratios the smallest relative size is {:.3e} at j = {} (needed {:.1e}); |ratio({})| = {:.3e}",
            self.len, self.min_relative, self.argmin, self.decay_tol, self.len, self.last.abs()
        )
    }
}

/// Default decay threshold for [`normalize_b`].
pub const DEFAULT_DECAY_TOL: f64 = 1e-8;

/// True when `|ratio(j_sum)| < decay_tol * max |ratio|` and `|ratio|` strictly
/// decreases over the last five indices up to `j_sum`.
pub fn decays_at(ratios: &[f64], j_sum: usize, decay_tol: f64) -> bool {
    if j_sum < 5 || j_sum > ratios.len() {
        return false;
    }
    let max_abs = ratios[..j_sum].iter().map(|r| r.abs()).fold(0.0, f64::max);
    let window = &ratios[j_sum - 5..j_sum];
    ratios[j_sum - 1].abs() < decay_tol * max_abs
        && window.windows(2).all(|w| w[1].abs() < w[0].abs())
}

/// Smallest `j_sum` at which [`decays_at`] holds.
pub fn select_truncation(ratios: &[f64], decay_tol: f64) -> Option<usize> {
    (5..=ratios.len()).find(|&j| decays_at(ratios, j, decay_tol))
}

/// Rescales `b_j / b_1` so the first `j_sum` entries sum to 1. With `j_sum =
/// None` the smallest decaying truncation is chosen.
pub fn normalize_b(ratios: &[f64], j_sum: Option<usize>, decay_tol: f64) -> Result<TaylorCoefficients> {
    let chosen = match j_sum {
        Some(j) if decays_at(ratios, j, decay_tol) => Some(j),
        Some(_) => None,
        None => select_truncation(ratios, decay_tol),
    };
    let Some(j_sum) = chosen else {
        return Err(Error::Divergent(Box::new(divergence_report(ratios, decay_tol))));
    };
    let total: f64 = ratios[..j_sum].iter().sum();
    Ok(TaylorCoefficients {
        b: ratios[..j_sum].iter().map(|r| r / total).collect(),
        mode: CoefficientMode::Normalized,
    })
}

fn divergence_report(ratios: &[f64], decay_tol: f64) -> DivergenceReport {
    let max_abs = ratios.iter().map(|r| r.abs()).fold(0.0, f64::max);
    let (argmin, min_abs) = ratios
        .iter()
        .enumerate()
        .map(|(i, r)| (i + 1, r.abs()))
        .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
    DivergenceReport {
        len: ratios.len(),
        decay_tol,
        max_abs,
        min_relative: if max_abs > 0.0 { min_abs / max_abs } else { 0.0 },
        argmin,
        last: ratios.last().copied().unwrap_or(0.0),
    }
}

/// Evenly spaced grid of `points` values on `[0, 1]`.
pub fn unit_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

/// One `(x, h, err)` row per grid point.
pub type Curve = Vec<(f64, f64, f64)>;

pub fn series_curve(series: &SeriesRepresentation, points: usize) -> Curve {
    unit_grid(points)
        .into_iter()
        .map(|x| {
            let (h, err) = series.h_series(x);
            (x, h, err)
        })
        .collect()
}

pub fn closed_form_curve(sigma: f64, points: usize) -> Curve {
    unit_grid(points)
        .into_iter()
        .map(|x| (x, closed_form_no_env(x, sigma), 0.0))
        .collect()
}
