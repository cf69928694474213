use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("point {point:?} lies inside the body (|x| = {radius} < 1)")]
    PointInsideBody { point: [f64; 3], radius: f64 },
    #[error("incompatible azimuthal modes: {0}")]
    IncompatibleModes(String),
    #[error("basis has no {0} lifting field")]
    MissingLifting(&'static str),
    #[error("basis fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("Newton iteration diverged at lambda = {lambda} (residuals {history:?})")]
    NewtonDivergence {
        lambda: f64,
        history: Vec<f64>,
        last_iterate: Vec<f64>,
    },
    #[error("singular Jacobian (fold) at lambda = {lambda}")]
    SingularJacobian { lambda: f64 },
    #[error("eigen iteration failed to converge (Ritz residuals {history:?})")]
    EigenNonConvergence { history: Vec<f64> },
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no stored base branch: {0}")]
    MissingBranch(String),
    #[error("serialization error: {0}")]
    Serialization(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
