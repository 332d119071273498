use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("argument outside the domain of {function}: {reason}")]
    Domain {
        function: &'static str,
        reason: String,
    },

    #[error("quadrature did not converge: estimate {value:e}, error estimate {error:e} after {subdivisions} subdivisions")]
    Quadrature {
        value: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("integrator stalled at t = {t:e} (v = {v:e}, v' = {vp:e}): step {step:e} underflowed")]
    IntegratorStall { t: f64, v: f64, vp: f64, step: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("solution overran representable range at t = {t:e} (last valid level at t = {})", last_valid.t)]
    BlowupOverrun {
        t: f64,
        last_valid: Box<crate::wave::Snapshot>,
    },

    #[error("Picard iteration is not contracting (ratios {ratios:?}); reduce the local horizon")]
    ContractionFailure { ratios: Vec<f64> },

    #[error("geometry: {0}")]
    Geometry(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(function: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            function,
            reason: reason.into(),
        }
    }
}
