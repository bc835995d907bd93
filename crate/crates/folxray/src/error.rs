//! Error type shared across the crate, with the CLI exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A point left the extended domain M' or violated a geometric precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// The foliation gradient is (numerically) zero where it must not be.
    #[error("degenerate foliation: {0}")]
    DegenerateFoliation(String),

    /// The geodesic integrator failed to exit the domain within its budget.
    #[error("integration failure: {0}")]
    IntegrationFailure(String),

    /// A sampled geodesic violated the convexity bounds being certified.
    #[error("certificate failure: {0}")]
    CertificateFailure(String),

    /// Requested ray parameters are not covered by tabulated data.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// The exponential damping factor exceeded its certified Gaussian bound.
    #[error("damping violation: {0}")]
    DampingViolation(String),

    /// The linear solver stagnated or hit its iteration budget.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// The plane-wave window does not cover the geodesic footprint.
    #[error("window error: {0}")]
    Window(String),

    /// Bad configuration or arguments.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed binary or text payload.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code: 2 validation, 3 numeric failure, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Format(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}
