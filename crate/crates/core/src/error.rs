use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("incompatible operator: {0}")]
    IncompatibleOperator(String),
    #[error("invalid shell [{lo}, {hi})")]
    InvalidShell { lo: f64, hi: f64 },
    #[error("field is not in the kernel (residual {residual:.3e})")]
    NotInKernel { residual: f64 },
    #[error("field mean {mean:.3e} is nonzero and mean subtraction was not requested")]
    MeanMismatch { mean: f64 },
    #[error("aliasing risk: band {band} times degree {degree} must stay below N/2 = {half}")]
    AliasingRisk { band: usize, degree: u32, half: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("degenerate iteration step: S = {0}")]
    DegenerateStep(f64),
    #[error("integrand returned a non-finite value at cell {cell}")]
    BadIntegrand { cell: usize },
    #[error("not a minimiser: competitor lowers the energy by {deficit:.3e}")]
    NotAMinimiser { deficit: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
