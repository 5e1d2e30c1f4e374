use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A simulation or analysis configuration is inconsistent.
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("empty event stream: {0}")]
    EmptyStream(String),

    /// Adaptive quadrature did not reach the requested tolerance.
    #[error(
        "quadrature did not converge on [{a}, {b}]: estimated error {estimated_error:e} > tolerance {tolerance:e} after {evaluations} evaluations"
    )]
    Quadrature {
        a: f64,
        b: f64,
        estimated_error: f64,
        tolerance: f64,
        evaluations: usize,
    },

    /// The optimizer gave up; `last` carries the final iterate.
    #[error("fit did not converge after {iterations} iterations (chi2 = {chi2}): {reason}")]
    FitNonConvergence {
        iterations: usize,
        chi2: f64,
        last: Vec<f64>,
        reason: String,
    },

    /// The input data cannot seed a fit.
    #[error("fit initialization failed: {0}")]
    FitInit(String),

    /// A closed form is not available for the requested configuration.
    #[error("no closed form: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("binning mismatch: {0}")]
    Binning(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from user input rather than a numeric failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Config { .. }
                | Error::EmptyStream(_)
                | Error::Parse { .. }
                | Error::Binning(_)
                | Error::Unsupported(_)
                | Error::FitInit(_)
        )
    }
}
