use thiserror::Error;

/// Errors surfaced by the model and optimization layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible layout: {0}")]
    InfeasibleLayout(String),

    #[error("singular aero frame: apparent wind aligned with tether (cross norm {cross:.3e}, speed {speed:.3e})")]
    SingularAeroFrame { cross: f64, speed: f64 },

    #[error("infeasible induction: mean tether force {force:.3e} exceeds swept weight {swept:.3e}")]
    InfeasibleInduction { force: f64, swept: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("internal consistency: {0}")]
    InternalConsistency(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
