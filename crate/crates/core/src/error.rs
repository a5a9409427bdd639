use thiserror::Error;

use crate::fixation::DivergenceReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cutoff {cutoff} too small: tail bound {tail:.3e} is not below 0.5")]
    CutoffTooSmall { cutoff: usize, tail: f64 },

    #[error("coefficients did not stabilize before t = {t_max} (last window change {delta:.3e})")]
    NoStabilization { t_max: f64, delta: f64 },

    #[error("ratio-mode Taylor coefficients carry no scale; normalize them first")]
    RatioModeUnusable,

    #[error("Taylor coefficient ratios do not decay: {0}")]
    Divergent(Box<DivergenceReport>),
}
