use thiserror::Error;

/// Errors raised by the measure, dynamics, hamiltonian and recurrence layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid interval [{lo}, {hi}): lower bound exceeds upper bound")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("simple function supports {first} and {second} overlap")]
    OverlappingSupports { first: usize, second: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("finite-difference Jacobian column {column} is not finite")]
    SingularStencil { column: usize },

    #[error("theta = {theta} is not reachable at energy {energy} (radicand {radicand})")]
    TurningPointExceeded { energy: f64, theta: f64, radicand: f64 },

    #[error("start point is not inside the target set")]
    StartOutsideSet,

    #[error("set is not contained in the sampling domain")]
    SetOutsideDomain,

    #[error("no point of the target set found after {attempts} rejection samples")]
    EmptySet { attempts: u64 },

    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
