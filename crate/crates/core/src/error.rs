use thiserror::Error;

/// Errors surfaced by the simulation and verification engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("negative edge weight at ({row}, {col}): {value}")]
    NegativeWeight { row: usize, col: usize, value: f64 },

    #[error("self-loop at node {0}")]
    SelfLoop(usize),

    #[error("invalid mode index {index} (n_modes = {n_modes})")]
    InvalidMode { index: usize, n_modes: usize },

    #[error("time {t} outside trajectory range [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("uncertainty sample violates the norm bound: |F| = {norm} >= 1")]
    UncertaintyNormViolation { norm: f64 },

    #[error("mass matrix is singular within tolerance; cannot integrate")]
    SingularMassMatrix,

    #[error("non-finite state at t = {t} (last good t = {last_good})")]
    NonFiniteState { t: f64, last_good: f64 },

    #[error("B'PB ill-conditioned in mode {mode}: condition number {cond:.3e} exceeds cap {cap:.3e}")]
    NonsingularityLoss { mode: usize, cond: f64, cap: f64 },

    #[error("release at t = {t} while a packet is still in flight (arrival {arrival})")]
    PendingCollision { t: f64, arrival: f64 },

    #[error("matrix is not symmetric: max asymmetry {0:.3e}")]
    AsymmetricInput(f64),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
