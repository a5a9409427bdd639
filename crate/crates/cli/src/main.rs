//! `wf-levy`: stationary laws, duality coefficients, fixation curves,
//! simulations and the validation suite from the command line.

mod format;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wf_levy::easg;
use wf_levy::fixation::{self, SeriesRepresentation, DEFAULT_DECAY_TOL};
use wf_levy::odes::{self, Stabilization, StepPolicy};
use wf_levy::sde::{self, PathConfig};
use wf_levy::stationary;
use wf_levy::validate::{self, Mode, Suite, CRITERIA, QUICK_CRITERIA};
use wf_levy::{Environment, Error};

use format::{num, params_line};

#[derive(Parser)]
#[command(name = "wf-levy", version, about = "Fixation probabilities of a Wright-Fisher diffusion in a Lévy environment")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stationary law of the line-counting process as CSV `k,pi,ratio`.
    Pi {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long = "K", default_value_t = 64)]
        cutoff: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Dump of the Taylor coefficients (both routes) and the limit grid.
    Coeffs {
        #[command(flatten)]
        env: EnvArgs,
        /// Cutoff of the coefficient grid.
        #[arg(long = "K", default_value_t = 64)]
        cutoff: usize,
        /// Cutoff of the Q-system.
        #[arg(long = "J", default_value_t = 16)]
        j_cutoff: usize,
        /// Number of ratios computed for the normalization.
        #[arg(long, default_value_t = 40)]
        ratios: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fixation probability on a grid of x as CSV `x,h,err`.
    Fixation {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long = "K", default_value_t = 64)]
        cutoff: usize,
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Emit the four reference curves (sigma = lambda = 0.8, jumps 0, 0.1, 0.2, 0.3)
        /// as CSV `a,x,h,err`; the environment flags are ignored.
        #[arg(long)]
        reference_curves: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Monte Carlo estimates from path or graph simulation.
    Simulate {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, value_enum, default_value_t = SimMode::Sde)]
        mode: SimMode,
        /// Initial frequency (sde mode).
        #[arg(long, default_value_t = 0.5)]
        x0: f64,
        /// Horizon: T_max for paths, the observation time for graphs.
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Initial line count (easg mode).
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Initial block size (easg mode).
        #[arg(long, default_value_t = 1)]
        i: usize,
        /// Line cap of the graph (easg mode).
        #[arg(long, default_value_t = easg::DEFAULT_CAP)]
        cap: usize,
        /// Also write one path (sde) or one event log (easg) to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Record every this many steps in the path trace.
        #[arg(long, default_value_t = 100)]
        stride: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the acceptance criteria and report pass/fail per criterion.
    Validate {
        /// Only the criteria that need no large coefficient grid, with smaller samples.
        #[arg(long)]
        quick: bool,
        /// Run only these criteria (comma-separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
        #[arg(long, default_value_t = 20_240_601)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SimMode {
    Sde,
    Easg,
}

#[derive(Args)]
struct EnvArgs {
    /// Drift magnitude sigma >= 0.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Jump atom `z:w` with z in (-1, 1) \ {0} and w > 0; repeatable.
    #[arg(long = "atom", value_parser = parse_atom)]
    atoms: Vec<(f64, f64)>,
}

impl EnvArgs {
    fn build(&self) -> Result<Environment, Error> {
        Environment::new(self.sigma, self.atoms.iter().copied())
    }
}

#[derive(Args)]
struct OutArgs {
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArgs {
    fn open(&self) -> io::Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

fn parse_atom(s: &str) -> Result<(f64, f64), String> {
    let (z, w) = s
        .split_once(':')
        .ok_or_else(|| format!("expected z:w, got `{s}`"))?;
    let z: f64 = z.trim().parse().map_err(|e| format!("bad jump size `{z}`: {e}"))?;
    let w: f64 = w.trim().parse().map_err(|e| format!("bad weight `{w}`: {e}"))?;
    Environment::new(0.0, [(z, w)]).map_err(|e| e.to_string())?;
    Ok((z, w))
}

enum Failure {
    Usage(String),
    Validation,
    Io(io::Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(match e {
            Error::CutoffTooSmall { .. } => format!("{e}; increase --K"),
            Error::NoStabilization { .. } => format!("{e}; try a larger cutoff"),
            other => other.to_string(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Pi { env, cutoff, out } => cmd_pi(&env.build()?, cutoff, &out),
        Command::Coeffs {
            env,
            cutoff,
            j_cutoff,
            ratios,
            out,
        } => cmd_coeffs(&env.build()?, cutoff, j_cutoff, ratios, &out),
        Command::Fixation {
            env,
            cutoff,
            points,
            reference_curves,
            out,
        } => {
            if reference_curves {
                cmd_reference_curves(cutoff, points, &out)
            } else {
                cmd_fixation(&env.build()?, cutoff, points, &out)
            }
        }
        Command::Simulate {
            env,
            mode,
            x0,
            horizon,
            dt,
            samples,
            seed,
            m,
            i,
            cap,
            trace,
            stride,
            out,
        } => {
            let env = env.build()?;
            match mode {
                SimMode::Sde => {
                    let cfg = PathConfig {
                        x0,
                        t_max: horizon.unwrap_or(200.0),
                        dt,
                        seed,
                        ..PathConfig::default()
                    };
                    cmd_simulate_sde(&env, &cfg, samples.unwrap_or(10_000), trace, stride, &out)
                }
                SimMode::Easg => {
                    if !(1 <= i && i <= m && m <= cap && cap <= easg::MAX_CAP) {
                        return Err(Failure::Usage(format!(
                            "need 1 <= i <= m <= cap <= {}",
                            easg::MAX_CAP
                        )));
                    }
                    let run = GraphRun {
                        m,
                        i,
                        horizon: horizon.unwrap_or(1.0),
                        samples: samples.unwrap_or(100_000),
                        seed,
                        cap,
                    };
                    cmd_simulate_easg(&env, &run, trace, &out)
                }
            }
        }
        Command::Validate { quick, only, seed } => cmd_validate(quick, &only, seed),
    }
}

fn cmd_pi(env: &Environment, cutoff: usize, out: &OutArgs) -> Result<(), Failure> {
    let pi = stationary::compute_pi(env, cutoff)?;
    let mut w = out.open()?;
    writeln!(w, "k,pi,ratio")?;
    for k in 1..=cutoff {
        writeln!(w, "{},{},{}", k, num(pi.pi(k)), num(pi.ratios[k - 1]))?;
    }
    w.flush()?;
    let (lo, hi) = pi.pi1_bracket;
    eprintln!("pi(1) in [{}, {}], bracket width {}", num(lo), num(hi), num(hi - lo));
    eprintln!("tail beyond K = {cutoff}: <= {}", num(pi.tail_upper));
    eprintln!("recursion residual: {}", num(pi.recursion_residual()));
    Ok(())
}

fn cmd_coeffs(env: &Environment, cutoff: usize, j_cutoff: usize, ratios: usize, out: &OutArgs) -> Result<(), Failure> {
    if ratios < 1 || j_cutoff < 1 {
        return Err(Failure::Usage("--J and --ratios must be >= 1".into()));
    }
    let policy = StepPolicy::default();
    let stab = Stabilization::default();
    let b = odes::extract_b_ode(env, j_cutoff, policy, stab)?;
    let limit = odes::extract_a(env, cutoff, policy, stab)?;
    let r = odes::b_ratios(env, ratios);
    let diag = odes::relation_residuals(env, &limit.grid, &b.b);

    let mut w = out.open()?;
    writeln!(w, "{}", params_line(env))?;
    writeln!(
        w,
        "# b from the Q-system: J = {j_cutoff}, {:?} at t = {}, last window change {}",
        b.report.kind,
        num(b.report.t_final),
        num(b.report.last_delta)
    )?;
    writeln!(w, "# section b_ode: j value")?;
    for (idx, v) in b.b.iter().enumerate() {
        writeln!(w, "{} {}", idx + 1, num(*v))?;
    }
    writeln!(w, "# section b_ratio: j value")?;
    for (idx, v) in r.iter().enumerate() {
        writeln!(w, "{} {}", idx + 1, num(*v))?;
    }
    match fixation::normalize_b(&r, None, DEFAULT_DECAY_TOL) {
        Ok(t) => {
            writeln!(w, "# section b_normalized: j value (sum over j <= {})", t.b.len())?;
            for (idx, v) in t.b.iter().enumerate() {
                writeln!(w, "{} {}", idx + 1, num(*v))?;
            }
        }
        Err(Error::Divergent(rep)) => writeln!(w, "# section b_normalized: divergent: {rep}")?,
        Err(e) => return Err(e.into()),
    }
    writeln!(
        w,
        "# a from the R-system: K = {cutoff}, {:?} at t = {}, last window change {}, surviving mass {}",
        limit.report.kind,
        num(limit.report.t_final),
        num(limit.report.last_delta),
        num(limit.surviving_mass())
    )?;
    writeln!(w, "# section a: k j value")?;
    for (k, j, v) in limit.grid.entries() {
        writeln!(w, "{k} {j} {}", num(v))?;
    }
    writeln!(w, "# residual a_relation_max {}", num(diag.max_a_residual(cutoff)))?;
    writeln!(w, "# residual b_relation_max {}", num(diag.max_b_residual()))?;
    writeln!(w, "# residual b_minus_row_sums_max {}", num(diag.max_b_vs_a()))?;
    w.flush()?;
    Ok(())
}

fn series_for(env: &Environment, cutoff: usize) -> Result<SeriesRepresentation, Failure> {
    let limit = odes::extract_a(env, cutoff, StepPolicy::default(), Stabilization::default())?;
    let pi = stationary::compute_pi(env, cutoff.max(validate::PI_CUTOFF))?;
    eprintln!(
        "K = {cutoff}: {:?} stabilization, coefficient mass lost to truncation {}",
        limit.report.kind,
        num(1.0 - limit.surviving_mass())
    );
    Ok(SeriesRepresentation::from_limit(&limit, &pi))
}

fn cmd_fixation(env: &Environment, cutoff: usize, points: usize, out: &OutArgs) -> Result<(), Failure> {
    let series = series_for(env, cutoff)?;
    let mut w = out.open()?;
    writeln!(w, "x,h,err")?;
    for (x, h, err) in fixation::series_curve(&series, points) {
        writeln!(w, "{},{},{}", num(x), num(h), num(err))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_reference_curves(cutoff: usize, points: usize, out: &OutArgs) -> Result<(), Failure> {
    let mut w = out.open()?;
    writeln!(w, "a,x,h,err")?;
    for a in validate::REFERENCE_JUMPS {
        let curve = if a == 0.0 {
            fixation::closed_form_curve(validate::REFERENCE_SIGMA, points)
        } else {
            fixation::series_curve(&series_for(&validate::reference_env(a), cutoff)?, points)
        };
        for (x, h, err) in curve {
            writeln!(w, "{},{},{},{}", num(a), num(x), num(h), num(err))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate_sde(
    env: &Environment,
    cfg: &PathConfig,
    samples: usize,
    trace: Option<PathBuf>,
    stride: usize,
    out: &OutArgs,
) -> Result<(), Failure> {
    let est = sde::estimate_fixation(env, samples, cfg)?;
    let mut w = out.open()?;
    writeln!(w, "{}", params_line(env))?;
    writeln!(w, "x0,h,se,undecided,paths")?;
    writeln!(
        w,
        "{},{},{},{},{}",
        num(cfg.x0),
        num(est.h),
        num(est.std_error),
        num(est.undecided_fraction),
        samples
    )?;
    w.flush()?;
    if let Some(path) = trace {
        let mut t = BufWriter::new(File::create(path)?);
        writeln!(t, "t,x")?;
        for (time, x) in sde::simulate_path(env, cfg, stride)? {
            writeln!(t, "{},{}", num(time), num(x))?;
        }
        t.flush()?;
    }
    Ok(())
}

struct GraphRun {
    m: usize,
    i: usize,
    horizon: f64,
    samples: usize,
    seed: u64,
    cap: usize,
}

fn cmd_simulate_easg(env: &Environment, run: &GraphRun, trace: Option<PathBuf>, out: &OutArgs) -> Result<(), Failure> {
    let est = easg::estimate_duality_coeffs(env, run.m, run.i, run.horizon, run.samples, run.seed, run.cap);
    let policy = StepPolicy::default();
    let grid_cutoff = (2 * run.cap).max(run.m);
    let grid = odes::integrate_r(env, grid_cutoff, run.m, run.i, run.horizon, policy)?;
    let q = odes::integrate_q(env, grid_cutoff, run.i, run.horizon, policy)?;
    let mut w = out.open()?;
    writeln!(w, "{}", params_line(env))?;
    writeln!(
        w,
        "# graphs: {} (used {}), overflow fraction {}, T = {}",
        run.samples,
        est.used,
        num(est.overflow_fraction),
        num(run.horizon)
    )?;
    writeln!(w, "# section R: k,j,mc,se,ode")?;
    for k in 1..=run.cap {
        for j in 1..=k {
            let (mc, se, exact) = (est.r_mean[k][j], est.r_se[k][j], grid.get(k, j));
            if mc != 0.0 || exact.abs() > 1e-12 {
                writeln!(w, "{k},{j},{},{},{}", num(mc), num(se), num(exact))?;
            }
        }
    }
    writeln!(w, "# section Q: j,mc,se,ode")?;
    for j in 1..=run.cap {
        let (mc, se, exact) = (est.q_mean[j], est.q_se[j], q.get(j));
        if mc != 0.0 || exact.abs() > 1e-12 {
            writeln!(w, "{j},{},{},{}", num(mc), num(se), num(exact))?;
        }
    }
    w.flush()?;
    if let Some(path) = trace {
        let mut rng = wf_levy::mc::stream_rng(run.seed, u64::MAX);
        let state = easg::run_to(env, run.m, run.i, run.horizon, run.cap, &mut rng);
        let mut t = BufWriter::new(File::create(path)?);
        for ev in &state.log {
            writeln!(t, "{ev}")?;
        }
        t.flush()?;
    }
    Ok(())
}

fn cmd_validate(quick: bool, only: &[usize], seed: u64) -> Result<(), Failure> {
    let suite = Suite::new(if quick { Mode::Quick } else { Mode::Full }, seed);
    let ids: Vec<usize> = if !only.is_empty() {
        if let Some(bad) = only.iter().find(|&&id| id == 0 || id > CRITERIA) {
            return Err(Failure::Usage(format!("no criterion {bad}; ids run from 1 to {CRITERIA}")));
        }
        only.to_vec()
    } else if quick {
        QUICK_CRITERIA.to_vec()
    } else {
        (1..=CRITERIA).collect()
    };
    let mut failed = 0;
    for id in ids {
        let report = suite.run(id);
        println!("{report}");
        failed += usize::from(!report.passed);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        Err(Failure::Validation)
    } else {
        println!("all criteria passed");
        Ok(())
    }
}
