//! Fixation probabilities of a Wright-Fisher diffusion under two-sided
//! selection driven by a compound-Poisson Lévy environment.
//!
//! Three independent routes are provided and cross-check one another:
//!
//! * deterministic: the stationary law of the line-counting process
//!   ([`stationary`]), linear ODE systems for the duality coefficients
//!   ([`odes`]) and the evaluators built from their limits ([`fixation`]);
//! * the enlarged ancestral selection graph with its signed encoding
//!   function ([`easg`]);
//! * direct simulation of the jump diffusion ([`sde`]).
//!
//! [`validate`] bundles the numerical acceptance checks used by the test
//! suite and the command-line tool.

pub mod easg;
pub mod env;
pub mod error;
pub mod fixation;
pub mod mc;
pub mod odes;
pub mod sde;
pub mod stationary;
pub mod validate;

pub use env::{binomial, Atom, Environment, OdeCoeffs};
pub use error::{Error, Result};
pub use fixation::{
    closed_form_no_env, normalize_b, CoefficientMode, DivergenceReport, SeriesRepresentation,
    TaylorCoefficients,
};
pub use odes::{
    b_ratios, extract_a, extract_b_ode, integrate_q, integrate_r, relation_residuals, ALimit,
    BLimit, CoefficientGrid, QVector, Stabilization, StepPolicy,
};
pub use stationary::{compute_pi, tail_bound, StationaryDistribution};
