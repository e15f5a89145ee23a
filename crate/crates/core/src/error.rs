use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} is outside the admissible domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },
    #[error("derivative order {0} is not supported (max 2)")]
    UnsupportedOrder(u8),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid time grid: {0}")]
    Grid(String),
    #[error("flow left the working domain of sigma at z = {z}")]
    FlowEscape { z: f64 },
    #[error("x = {x} is outside the range [{lo}, {hi}] of the flow")]
    Range { x: f64, lo: f64, hi: f64 },
    #[error("density is undefined at t = 0 (point mass)")]
    DegenerateTime,
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("density underflow at x = {x}; truncate the domain")]
    Tail { x: f64 },
    #[error("quadrature did not converge (error estimate {estimate:e}, value {value})")]
    Quadrature { value: f64, estimate: f64 },
    #[error("support of p is not contained in support of q near x = {x}")]
    Support { x: f64 },
    #[error("finite-difference step {step} must satisfy 0 < step < t = {t}")]
    Step { step: f64, t: f64 },
    #[error("test function failed at sample {index}: {reason}")]
    SampleEvaluation { index: u64, reason: String },
    #[error("{0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
