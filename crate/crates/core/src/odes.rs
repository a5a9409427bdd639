//! Linear ODE systems for the duality coefficients.
//!
//! The R-system lives on the triangular lattice `1 <= j <= k <= K` and its
//! long-time limit gives the grid `a(k, j)`. The Q-system lives on
//! `1 <= j <= J` and its limit gives the Taylor coefficients `b_j`. Both are
//! truncated by reading every out-of-range entry as 0 and are integrated with
//! classical fixed-step RK4.

use crate::env::Environment;
use crate::error::{Error, Result};

/// Flat index of lattice point `(k, j)`, `1 <= j <= k`.
#[inline]
pub fn lattice_index(k: usize, j: usize) -> usize {
    k * (k - 1) / 2 + j - 1
}

/// Number of lattice points with `k <= cutoff`.
#[inline]
pub fn lattice_len(cutoff: usize) -> usize {
    cutoff * (cutoff + 1) / 2
}

/// Compressed sparse rows of a constant linear generator `y' = A y`.
#[derive(Debug, Clone)]
pub struct SparseGenerator {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// Largest diagonal magnitude; bounds the stable RK4 step.
    pub stiffness: f64,
}

impl SparseGenerator {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>, stiffness: f64) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            row_ptr,
            cols,
            vals,
            stiffness,
        }
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            *o = self.cols[lo..hi]
                .iter()
                .zip(&self.vals[lo..hi])
                .map(|(&c, &v)| v * y[c])
                .sum();
        }
    }

    /// Advances `y` by `steps` RK4 steps of size `dt`.
    pub fn rk4(&self, y: &mut [f64], dt: f64, steps: usize) {
        let n = y.len();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for _ in 0..steps {
            self.apply(y, &mut k1);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * dt * k1[i];
            }
            self.apply(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * dt * k2[i];
            }
            self.apply(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + dt * k3[i];
            }
            self.apply(&tmp, &mut k4);
            for i in 0..n {
                y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }

    /// Integrates over `duration` with the largest step not exceeding `max_step`.
    pub fn advance(&self, y: &mut [f64], duration: f64, max_step: f64) {
        if duration <= 0.0 {
            return;
        }
        let steps = (duration / max_step).ceil().max(1.0) as usize;
        self.rk4(y, duration / steps as f64, steps);
    }
}

/// Generator of the truncated R-system on `k <= cutoff`.
pub fn r_generator(env: &Environment, cutoff: usize) -> SparseGenerator {
    let mut rows = Vec::with_capacity(lattice_len(cutoff));
    for k in 1..=cutoff {
        for j in 1..=k {
            let c = env.ode_coeffs(k, j);
            let mut row = Vec::new();
            if k < cutoff {
                row.push((lattice_index(k + 1, j + 1), env.tau(j + 1, j)));
                row.push((lattice_index(k + 1, j), c.e_kj));
            }
            if k >= 2 && j >= 2 {
                row.push((lattice_index(k - 1, j - 1), c.f_j));
            }
            if j < k {
                row.push((lattice_index(k - 1, j), c.f_kj));
            }
            row.push((lattice_index(k, j), -env.d(k)));
            if k % 2 == 0 {
                let half = k / 2;
                for l in j.div_ceil(2)..=j.min(half) {
                    row.push((lattice_index(half, l), env.tau(l, j)));
                }
            }
            rows.push(row);
        }
    }
    SparseGenerator::from_rows(rows, env.d(cutoff))
}

/// Generator of the truncated Q-system on `j <= cutoff`.
pub fn q_generator(env: &Environment, cutoff: usize) -> SparseGenerator {
    let mut rows = Vec::with_capacity(cutoff);
    let mut stiffness: f64 = 0.0;
    for j in 1..=cutoff {
        let mut row = vec![(j - 1, -env.d(j))];
        if j >= 2 {
            row.push((j - 2, env.ode_coeffs(j, j).f_j));
        }
        for l in j.div_ceil(2)..=(j + 1).min(cutoff) {
            row.push((l - 1, env.tau(l, j)));
        }
        stiffness = stiffness.max(env.d(j));
        rows.push(row);
    }
    SparseGenerator::from_rows(rows, stiffness)
}

/// Step-size policy: `dt <= min(max_dt, 0.5 / d_K)`.
#[derive(Debug, Clone, Copy)]
pub struct StepPolicy {
    pub max_dt: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self { max_dt: 0.01 }
    }
}

impl StepPolicy {
    pub fn step_for(&self, stiffness: f64) -> f64 {
        if stiffness > 0.0 {
            self.max_dt.min(0.5 / stiffness)
        } else {
            self.max_dt
        }
    }
}

/// When to stop integrating towards the limit.
///
/// After each `window` of time the largest change `delta` of any entry is
/// compared with `tol`. The truncated systems carry a slow leak mode (mass
/// lost through transitions beyond the cutoff), so an exact `delta < tol`
/// may never happen; a run is also accepted as drift-limited when two
/// consecutive deltas agree to within `tol` and the delta itself is below
/// `max_drift`. Past `t_max` the run fails.
#[derive(Debug, Clone, Copy)]
pub struct Stabilization {
    pub window: f64,
    pub tol: f64,
    pub t_max: f64,
    pub max_drift: f64,
}

impl Default for Stabilization {
    fn default() -> Self {
        Self {
            window: 1.0,
            tol: 1e-9,
            t_max: 200.0,
            max_drift: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilizationKind {
    Strict,
    DriftLimited,
}

/// What the stabilization loop achieved.
#[derive(Debug, Clone, Copy)]
pub struct StabilizationReport {
    pub kind: StabilizationKind,
    pub t_final: f64,
    pub last_delta: f64,
    pub prev_delta: f64,
    pub window: f64,
    pub tol: f64,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn run_to_stability(
    generator: &SparseGenerator,
    y: &mut [f64],
    policy: StepPolicy,
    stab: Stabilization,
) -> Result<StabilizationReport> {
    let dt = policy.step_for(generator.stiffness);
    let (mut t, mut prev_delta) = (0.0, f64::INFINITY);
    let mut windows = 0usize;
    while t < stab.t_max {
        let before = y.to_vec();
        generator.advance(y, stab.window, dt);
        t += stab.window;
        windows += 1;
        let delta = max_abs_diff(y, &before);
        let report = |kind| StabilizationReport {
            kind,
            t_final: t,
            last_delta: delta,
            prev_delta,
            window: stab.window,
            tol: stab.tol,
        };
        if delta < stab.tol {
            return Ok(report(StabilizationKind::Strict));
        }
        if windows >= 2 && (delta - prev_delta).abs() < stab.tol && delta <= stab.max_drift {
            return Ok(report(StabilizationKind::DriftLimited));
        }
        prev_delta = delta;
    }
    Err(Error::NoStabilization {
        t_max: stab.t_max,
        delta: prev_delta,
    })
}

/// Values `R_t^{m,k}(i, j)` on the lattice `1 <= j <= k <= cutoff`.
#[derive(Debug, Clone)]
pub struct CoefficientGrid {
    pub env: Environment,
    pub m: usize,
    pub i: usize,
    pub cutoff: usize,
    pub t: f64,
    pub values: Vec<f64>,
}

impl CoefficientGrid {
    /// The `t = 0` grid: 1 at `(m, i)`, 0 elsewhere.
    pub fn initial(env: &Environment, cutoff: usize, m: usize, i: usize) -> Result<Self> {
        if !(1 <= i && i <= m && m <= cutoff) {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= i <= m <= K, got m={m}, i={i}, K={cutoff}"
            )));
        }
        let mut values = vec![0.0; lattice_len(cutoff)];
        values[lattice_index(m, i)] = 1.0;
        Ok(Self {
            env: env.clone(),
            m,
            i,
            cutoff,
            t: 0.0,
            values,
        })
    }

    /// `R(k, j)`, 0 off the lattice.
    pub fn get(&self, k: usize, j: usize) -> f64 {
        if j == 0 || j > k || k > self.cutoff {
            0.0
        } else {
            self.values[lattice_index(k, j)]
        }
    }

    /// `sum_j R(k, j)`.
    pub fn row_sum(&self, k: usize) -> f64 {
        (1..=k).map(|j| self.get(k, j)).sum()
    }

    /// `sum_{k, j} R(k, j) x^j`.
    pub fn moment(&self, x: f64) -> f64 {
        let mut total = 0.0;
        for k in 1..=self.cutoff {
            let mut p = 1.0;
            for j in 1..=k {
                p *= x;
                total += self.get(k, j) * p;
            }
        }
        total
    }

    /// `P_k(x) = sum_j R(k, j) x^j`.
    pub fn row_polynomial(&self, k: usize, x: f64) -> f64 {
        let mut p = 1.0;
        let mut total = 0.0;
        for j in 1..=k {
            p *= x;
            total += self.get(k, j) * p;
        }
        total
    }

    /// Iterates `(k, j, value)` in lattice order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (1..=self.cutoff).flat_map(move |k| (1..=k).map(move |j| (k, j, self.get(k, j))))
    }
}

/// Right-hand side of the truncated R-system at the current grid.
pub fn r_rhs(grid: &CoefficientGrid) -> Vec<f64> {
    let generator = r_generator(&grid.env, grid.cutoff);
    let mut out = vec![0.0; grid.values.len()];
    generator.apply(&grid.values, &mut out);
    out
}

/// Integrates the R-system from the `(m, i)` initial grid up to time `t_end`.
pub fn integrate_r(
    env: &Environment,
    cutoff: usize,
    m: usize,
    i: usize,
    t_end: f64,
    policy: StepPolicy,
) -> Result<CoefficientGrid> {
    if cutoff < 2 {
        return Err(Error::InvalidArgument("R-system needs K >= 2".into()));
    }
    let mut grid = CoefficientGrid::initial(env, cutoff, m, i)?;
    let generator = r_generator(env, cutoff);
    generator.advance(&mut grid.values, t_end, policy.step_for(generator.stiffness));
    grid.t = t_end.max(0.0);
    Ok(grid)
}

/// Stabilized R grid together with how it was stabilized.
#[derive(Debug, Clone)]
pub struct ALimit {
    pub grid: CoefficientGrid,
    pub report: StabilizationReport,
}

impl ALimit {
    pub fn a(&self, k: usize, j: usize) -> f64 {
        self.grid.get(k, j)
    }

    /// `sum_{k, j} a(k, j)`: the mass the truncated system still holds. The
    /// untruncated limit has mass 1.
    pub fn surviving_mass(&self) -> f64 {
        self.grid.values.iter().sum()
    }

    /// The grid divided by [`Self::surviving_mass`], which removes the slow
    /// uniform decay caused by transitions beyond the cutoff.
    pub fn mass_corrected(&self) -> CoefficientGrid {
        let mass = self.surviving_mass();
        let mut grid = self.grid.clone();
        grid.values.iter_mut().for_each(|v| *v /= mass);
        grid
    }
}

/// Integrates from `m = i = 1` until stable and returns the terminal grid as `a`.
pub fn extract_a(
    env: &Environment,
    cutoff: usize,
    policy: StepPolicy,
    stab: Stabilization,
) -> Result<ALimit> {
    extract_a_from(env, cutoff, 1, 1, policy, stab)
}

/// As [`extract_a`] but from an arbitrary start `(m, i)`; the limit should not depend on it.
pub fn extract_a_from(
    env: &Environment,
    cutoff: usize,
    m: usize,
    i: usize,
    policy: StepPolicy,
    stab: Stabilization,
) -> Result<ALimit> {
    if cutoff < 2 {
        return Err(Error::InvalidArgument("R-system needs K >= 2".into()));
    }
    let mut grid = CoefficientGrid::initial(env, cutoff, m, i)?;
    let generator = r_generator(env, cutoff);
    let report = run_to_stability(&generator, &mut grid.values, policy, stab)?;
    grid.t = report.t_final;
    Ok(ALimit { grid, report })
}

/// `Q_t(i, j)` for `j = 1..=cutoff` (index `j - 1`).
#[derive(Debug, Clone)]
pub struct QVector {
    pub env: Environment,
    pub i: usize,
    pub cutoff: usize,
    pub t: f64,
    pub values: Vec<f64>,
}

impl QVector {
    pub fn initial(env: &Environment, cutoff: usize, i: usize) -> Result<Self> {
        if !(1 <= i && i <= cutoff) {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= i <= J, got i={i}, J={cutoff}"
            )));
        }
        let mut values = vec![0.0; cutoff];
        values[i - 1] = 1.0;
        Ok(Self {
            env: env.clone(),
            i,
            cutoff,
            t: 0.0,
            values,
        })
    }

    pub fn get(&self, j: usize) -> f64 {
        if j == 0 || j > self.cutoff {
            0.0
        } else {
            self.values[j - 1]
        }
    }

    /// `sum_j Q(j) x^j`.
    pub fn moment(&self, x: f64) -> f64 {
        let mut p = 1.0;
        self.values
            .iter()
            .map(|v| {
                p *= x;
                v * p
            })
            .sum()
    }
}

/// Right-hand side of the truncated Q-system.
pub fn q_rhs(q: &QVector) -> Vec<f64> {
    let generator = q_generator(&q.env, q.cutoff);
    let mut out = vec![0.0; q.cutoff];
    generator.apply(&q.values, &mut out);
    out
}

pub fn integrate_q(
    env: &Environment,
    cutoff: usize,
    i: usize,
    t_end: f64,
    policy: StepPolicy,
) -> Result<QVector> {
    let mut q = QVector::initial(env, cutoff, i)?;
    let generator = q_generator(env, cutoff);
    generator.advance(&mut q.values, t_end, policy.step_for(generator.stiffness));
    q.t = t_end.max(0.0);
    Ok(q)
}

/// Stabilized Q vector: absolute Taylor coefficients `b_1..b_J`.
#[derive(Debug, Clone)]
pub struct BLimit {
    pub b: Vec<f64>,
    pub report: StabilizationReport,
}

impl BLimit {
    pub fn b(&self, j: usize) -> f64 {
        self.b.get(j.wrapping_sub(1)).copied().unwrap_or(0.0)
    }
}

/// Integrates the Q-system from `i = 1` until stable.
pub fn extract_b_ode(
    env: &Environment,
    cutoff: usize,
    policy: StepPolicy,
    stab: Stabilization,
) -> Result<BLimit> {
    let mut q = QVector::initial(env, cutoff, 1)?;
    let generator = q_generator(env, cutoff);
    let report = run_to_stability(&generator, &mut q.values, policy, stab)?;
    Ok(BLimit { b: q.values, report })
}

/// Sensitivity of `b_1..b_report` to the Q-system cutoff.
#[derive(Debug, Clone)]
pub struct TruncationCheck {
    pub report_len: usize,
    pub b_small: Vec<f64>,
    pub b_large: Vec<f64>,
    pub max_difference: f64,
    pub tol: f64,
}

impl TruncationCheck {
    pub fn passed(&self) -> bool {
        self.max_difference <= self.tol
    }
}

/// Extracts `b` with cutoffs `report + 4` and `report + 8` and compares the first `report` entries.
pub fn b_truncation_check(
    env: &Environment,
    report: usize,
    policy: StepPolicy,
    stab: Stabilization,
    tol: f64,
) -> Result<TruncationCheck> {
    let small = extract_b_ode(env, report + 4, policy, stab)?;
    let large = extract_b_ode(env, report + 8, policy, stab)?;
    let b_small = small.b[..report].to_vec();
    let b_large = large.b[..report].to_vec();
    Ok(TruncationCheck {
        report_len: report,
        max_difference: max_abs_diff(&b_small, &b_large),
        b_small,
        b_large,
        tol,
    })
}

/// `b_j / b_1` for `j = 1..=len` from the linear relation solved upward:
/// `b_{j+1} = (d_j b_j - f_j b_{j-1} - sum_{l<=j} tau(l, j) b_l) / ((j+1) j)`.
pub fn b_ratios(env: &Environment, len: usize) -> Vec<f64> {
    let mut b = Vec::with_capacity(len);
    if len == 0 {
        return b;
    }
    b.push(1.0);
    for j in 1..len {
        let prev = if j >= 2 { b[j - 2] } else { 0.0 };
        let f_j = (j as f64 - 1.0) * env.sigma();
        let mut acc = env.d(j) * b[j - 1] - f_j * prev;
        for l in j.div_ceil(2)..=j {
            acc -= env.tau(l, j) * b[l - 1];
        }
        b.push(acc / env.tau(j + 1, j));
    }
    b
}

/// Residual of the `b` relation at each `j < len`:
/// `-d_j b_j + f_j b_{j-1} + sum_{l<=j+1} tau(l, j) b_l`.
pub fn b_relation_residuals(env: &Environment, b: &[f64]) -> Vec<f64> {
    let at = |j: usize| if j == 0 { 0.0 } else { b[j - 1] };
    (1..b.len())
        .map(|j| {
            let f_j = (j as f64 - 1.0) * env.sigma();
            let mut r = -env.d(j) * at(j) + f_j * at(j - 1);
            for l in j.div_ceil(2)..=j + 1 {
                r += env.tau(l, j) * at(l);
            }
            r
        })
        .collect()
}

/// Residuals of the stationary relation between rows `k - 1`, `k`, `k + 1`
/// and `k / 2` of `a`, for `k < K`, `j <= k`, in lattice order.
pub fn a_relation_residuals(env: &Environment, a: &CoefficientGrid) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for k in 1..a.cutoff {
        for j in 1..=k {
            let c = env.ode_coeffs(k, j);
            let mut r = env.tau(j + 1, j) * a.get(k + 1, j + 1) + c.e_kj * a.get(k + 1, j)
                - env.d(k) * a.get(k, j);
            if k >= 2 {
                r += c.f_j * a.get(k - 1, j - 1);
            }
            if j < k {
                r += c.f_kj * a.get(k - 1, j);
            }
            if k % 2 == 0 {
                for l in 1..=j.min(k / 2) {
                    r += env.tau(l, j) * a.get(k / 2, l);
                }
            }
            out.push((k, j, r));
        }
    }
    out
}

/// Consistency diagnostics of a limit grid and a `b` sequence.
#[derive(Debug, Clone)]
pub struct RelationDiagnostics {
    /// `(k, j, residual)` of the `a` relation, `k < K`.
    pub a_residuals: Vec<(usize, usize, f64)>,
    pub b_residuals: Vec<f64>,
    /// `b_j - sum_k a(k, j)` for each reported `j`.
    pub b_vs_a: Vec<f64>,
}

impl RelationDiagnostics {
    /// Largest `a` residual over rows `k <= max_k`.
    pub fn max_a_residual(&self, max_k: usize) -> f64 {
        self.a_residuals
            .iter()
            .filter(|(k, _, _)| *k <= max_k)
            .map(|(_, _, r)| r.abs())
            .fold(0.0, f64::max)
    }

    pub fn max_b_residual(&self) -> f64 {
        self.b_residuals.iter().map(|r| r.abs()).fold(0.0, f64::max)
    }

    pub fn max_b_vs_a(&self) -> f64 {
        self.b_vs_a.iter().map(|r| r.abs()).fold(0.0, f64::max)
    }
}

pub fn relation_residuals(env: &Environment, a: &CoefficientGrid, b: &[f64]) -> RelationDiagnostics {
    let b_vs_a = b
        .iter()
        .enumerate()
        .map(|(idx, bj)| {
            let j = idx + 1;
            bj - (j..=a.cutoff).map(|k| a.get(k, j)).sum::<f64>()
        })
        .collect();
    RelationDiagnostics {
        a_residuals: a_relation_residuals(env, a),
        b_residuals: b_relation_residuals(env, b),
        b_vs_a,
    }
}

/// Forward equation of the line-counting chain truncated at `cutoff`
/// (transitions above the cutoff are dropped), started from `m` lines.
pub fn line_count_distribution(
    env: &Environment,
    cutoff: usize,
    m: usize,
    t_end: f64,
    policy: StepPolicy,
) -> Result<Vec<f64>> {
    if !(1 <= m && m <= cutoff) {
        return Err(Error::InvalidArgument(format!("need 1 <= m <= K, got m={m}")));
    }
    let mut rows = vec![Vec::new(); cutoff];
    for (n, row) in rows.iter_mut().enumerate().map(|(i, r)| (i + 1, r)) {
        row.push((n - 1, -env.d(n)));
        if n < cutoff {
            row.push((n, ((n + 1) * n) as f64));
        }
        if n >= 2 {
            row.push((n - 2, (n - 1) as f64 * env.sigma()));
        }
        if n % 2 == 0 {
            row.push((n / 2 - 1, env.total_mass()));
        }
    }
    let generator = SparseGenerator::from_rows(rows, env.d(cutoff));
    let mut p = vec![0.0; cutoff];
    p[m - 1] = 1.0;
    generator.advance(&mut p, t_end, policy.step_for(generator.stiffness));
    Ok(p)
}
