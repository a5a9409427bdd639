//! Path simulation of the jump diffusion
//! `dX = X(1-X) dL + sqrt(2 X (1-X)) dB`, `L(t) = -sigma t + compound Poisson`.
//!
//! Between jumps the Wright-Fisher part is advanced by Euler-Maruyama with
//! clamping to `[0, 1]`; at a jump of size `z` the state moves to
//! `x + x(1-x) z`.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mc::{self, MeanVar};

#[derive(Debug, Clone, Copy)]
pub struct PathConfig {
    pub x0: f64,
    pub t_max: f64,
    pub dt: f64,
    pub boundary_tol: f64,
    pub seed: u64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            x0: 0.5,
            t_max: 200.0,
            dt: 1e-3,
            boundary_tol: 1e-6,
            seed: 0,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.x0) {
            return Err(Error::InvalidArgument(format!("x0 = {} outside [0, 1]", self.x0)));
        }
        if !(self.dt > 0.0) || !(self.t_max > 0.0) {
            return Err(Error::InvalidArgument("dt and t_max must be positive".into()));
        }
        if !(self.boundary_tol > 0.0 && self.boundary_tol < 0.5) {
            return Err(Error::InvalidArgument("boundary_tol must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Jump times and sizes on `[0, t_max]`, times increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JumpSchedule {
    pub jumps: Vec<(f64, f64)>,
}

pub fn sample_jump_schedule<R: Rng + ?Sized>(env: &Environment, t_max: f64, rng: &mut R) -> JumpSchedule {
    let lambda = env.total_mass();
    if lambda == 0.0 || t_max <= 0.0 {
        return JumpSchedule::default();
    }
    let count = Poisson::new(lambda * t_max)
        .expect("positive Poisson mean")
        .sample(rng) as usize;
    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * t_max).collect();
    times.sort_by(f64::total_cmp);
    JumpSchedule {
        jumps: times.into_iter().map(|t| (t, env.sample_jump(rng))).collect(),
    }
}

#[inline]
fn em_step<R: Rng + ?Sized>(x: f64, h: f64, sigma: f64, rng: &mut R) -> f64 {
    let v = x * (1.0 - x);
    if v <= 0.0 {
        return x;
    }
    let noise: f64 = rng.sample(StandardNormal);
    (x - sigma * v * h + (2.0 * v * h).sqrt() * noise).clamp(0.0, 1.0)
}

/// Euler-Maruyama over `duration`: full steps of `dt` then one partial step.
pub fn evolve_between_jumps<R: Rng + ?Sized>(x: f64, duration: f64, sigma: f64, dt: f64, rng: &mut R) -> f64 {
    let mut x = x;
    let full = (duration / dt).floor();
    for _ in 0..full as u64 {
        if x == 0.0 || x == 1.0 {
            return x;
        }
        x = em_step(x, dt, sigma, rng);
    }
    let rest = duration - full * dt;
    if rest > 0.0 {
        x = em_step(x, rest, sigma, rng);
    }
    x
}

/// As [`evolve_between_jumps`] but stops as soon as `x` leaves `(tol, 1 - tol)`.
/// Returns the state and the time actually elapsed.
fn evolve_until_exit<R: Rng + ?Sized>(
    x: f64,
    duration: f64,
    sigma: f64,
    dt: f64,
    tol: f64,
    rng: &mut R,
) -> (f64, f64) {
    let mut x = x;
    let mut elapsed = 0.0;
    while elapsed < duration {
        if x <= tol || x >= 1.0 - tol {
            break;
        }
        let h = dt.min(duration - elapsed);
        x = em_step(x, h, sigma, rng);
        elapsed += h;
    }
    (x, elapsed)
}

/// `x + x(1-x) z`.
pub fn apply_jump(x: f64, z: f64) -> f64 {
    x + x * (1.0 - x) * z
}

#[derive(Debug, Clone, Copy)]
pub struct FixationEstimate {
    /// Fraction fixed at 1 among decided paths.
    pub h: f64,
    pub std_error: f64,
    pub undecided_fraction: f64,
    pub decided: usize,
}

enum Outcome {
    Lost,
    Fixed,
    Undecided,
}

fn fixation_path<R: Rng + ?Sized>(env: &Environment, cfg: &PathConfig, rng: &mut R) -> Outcome {
    let tol = cfg.boundary_tol;
    let classify = |x: f64| {
        if x <= tol {
            Some(Outcome::Lost)
        } else if x >= 1.0 - tol {
            Some(Outcome::Fixed)
        } else {
            None
        }
    };
    let mut x = cfg.x0;
    if let Some(o) = classify(x) {
        return o;
    }
    let schedule = sample_jump_schedule(env, cfg.t_max, rng);
    let mut t = 0.0;
    for &(tj, z) in schedule.jumps.iter().chain(std::iter::once(&(cfg.t_max, 0.0))) {
        let (nx, elapsed) = evolve_until_exit(x, tj - t, env.sigma(), cfg.dt, tol, rng);
        x = nx;
        if let Some(o) = classify(x) {
            return o;
        }
        debug_assert!((t + elapsed - tj).abs() < 1e-9);
        t = tj;
        x = apply_jump(x, z);
        if let Some(o) = classify(x) {
            return o;
        }
    }
    Outcome::Undecided
}

/// Runs `n_paths` paths until they leave `(tol, 1 - tol)` or reach `t_max`.
pub fn estimate_fixation(env: &Environment, n_paths: usize, cfg: &PathConfig) -> Result<FixationEstimate> {
    cfg.validate()?;
    let parts = mc::run_streams(n_paths, cfg.seed, mc::DEFAULT_STREAMS, |rng, count| {
        let (mut fixed, mut lost, mut open) = (0usize, 0usize, 0usize);
        for _ in 0..count {
            match fixation_path(env, cfg, rng) {
                Outcome::Fixed => fixed += 1,
                Outcome::Lost => lost += 1,
                Outcome::Undecided => open += 1,
            }
        }
        (fixed, lost, open)
    });
    let (fixed, lost, open) = parts
        .iter()
        .fold((0, 0, 0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    let decided = fixed + lost;
    let h = if decided > 0 { fixed as f64 / decided as f64 } else { f64::NAN };
    Ok(FixationEstimate {
        h,
        std_error: if decided > 0 { (h * (1.0 - h) / decided as f64).sqrt() } else { f64::NAN },
        undecided_fraction: open as f64 / n_paths.max(1) as f64,
        decided,
    })
}

/// Simulates one path and returns `X` at each of the increasing `times`.
pub fn sample_at<R: Rng + ?Sized>(env: &Environment, x0: f64, times: &[f64], dt: f64, rng: &mut R) -> Vec<f64> {
    let horizon = times.last().copied().unwrap_or(0.0);
    let schedule = sample_jump_schedule(env, horizon, rng);
    let mut jumps = schedule.jumps.iter().peekable();
    let (mut x, mut t) = (x0, 0.0);
    let mut out = Vec::with_capacity(times.len());
    for &obs in times {
        while let Some(&&(tj, z)) = jumps.peek() {
            if tj > obs {
                break;
            }
            x = apply_jump(evolve_between_jumps(x, tj - t, env.sigma(), dt, rng), z);
            t = tj;
            jumps.next();
        }
        x = evolve_between_jumps(x, obs - t, env.sigma(), dt, rng);
        t = obs;
        out.push(x);
    }
    out
}

/// One row of [`estimate_moments`].
#[derive(Debug, Clone, Copy)]
pub struct MomentEstimate {
    pub l: u32,
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
}

/// `E[X(T)^l]` for every `l` in `powers` and `T` in `times`, sharing paths.
pub fn estimate_moments(
    env: &Environment,
    x0: f64,
    powers: &[u32],
    times: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    if !(0.0..=1.0).contains(&x0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument("need x0 in [0, 1] and dt > 0".into()));
    }
    let mut sorted: Vec<f64> = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidArgument("observation times must be >= 0".into()));
    }
    let cells = powers.len() * sorted.len();
    let parts = mc::run_streams(n_paths, seed, mc::DEFAULT_STREAMS, |rng, count| {
        let mut acc = vec![MeanVar::default(); cells];
        for _ in 0..count {
            let xs = sample_at(env, x0, &sorted, dt, rng);
            for (ti, x) in xs.iter().enumerate() {
                for (li, &l) in powers.iter().enumerate() {
                    acc[li * sorted.len() + ti].push(x.powi(l as i32));
                }
            }
        }
        acc
    });
    let mut total = vec![MeanVar::default(); cells];
    for p in &parts {
        for (a, b) in total.iter_mut().zip(p) {
            a.merge(b);
        }
    }
    let mut out = Vec::with_capacity(cells);
    for &t in times {
        let ti = sorted.partition_point(|&s| s < t);
        for (li, &l) in powers.iter().enumerate() {
            let mv = &total[li * sorted.len() + ti];
            out.push(MomentEstimate {
                l,
                t,
                mean: mv.mean(),
                std_error: mv.std_error(),
            });
        }
    }
    Ok(out)
}

/// `E[X(T)^l]` from `x0`.
pub fn estimate_moment(
    env: &Environment,
    x0: f64,
    l: u32,
    t: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<MomentEstimate> {
    Ok(estimate_moments(env, x0, &[l], &[t], n_paths, dt, seed)?[0])
}

/// One path recorded every `stride` steps of `dt`, ending at `t_max`.
pub fn simulate_path(env: &Environment, cfg: &PathConfig, stride: usize) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    let every = cfg.dt * stride.max(1) as f64;
    let count = (cfg.t_max / every).floor() as usize;
    let mut times: Vec<f64> = (1..=count).map(|i| i as f64 * every).collect();
    if times.last().is_none_or(|&t| t < cfg.t_max) {
        times.push(cfg.t_max);
    }
    let mut rng = mc::stream_rng(cfg.seed, 0);
    let xs = sample_at(env, cfg.x0, &times, cfg.dt, &mut rng);
    Ok(std::iter::once((0.0, cfg.x0)).chain(times.into_iter().zip(xs)).collect())
}
