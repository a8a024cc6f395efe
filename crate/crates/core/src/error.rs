use thiserror::Error;

#[derive(Debug, Error)]
pub enum BgkError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-positive density {rho:e} in cell {cell}")]
    NonPositiveDensity { cell: usize, rho: f64 },

    #[error("non-positive temperature {temperature:e} in cell {cell}")]
    NonPositiveTemperature { cell: usize, temperature: f64 },

    #[error("discrete Maxwellian Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonNonConvergence { iterations: usize, residual: f64 },

    #[error("discrete Maxwellian exponent coefficient gamma = {gamma:e} is not negative")]
    NonNegativeGamma { gamma: f64 },

    #[error("negative distribution value {value:e} at cell {cell}, node {node}")]
    NegativeDistribution { cell: usize, node: usize, value: f64 },

    #[error("clamped mass {clamped:e} exceeds tolerance of total mass {total:e} at step {step}")]
    ExcessiveClamping { step: u64, clamped: f64, total: f64 },

    #[error("non-finite value detected at step {step}")]
    NonFinite { step: u64 },

    #[error("decay fit: {0}")]
    DecayFit(String),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BgkError {
    /// Attaches a cell index to errors raised by single-cell routines.
    pub(crate) fn at_cell(self, cell: usize) -> Self {
        match self {
            BgkError::NonPositiveDensity { rho, .. } => BgkError::NonPositiveDensity { cell, rho },
            BgkError::NonPositiveTemperature { temperature, .. } => {
                BgkError::NonPositiveTemperature { cell, temperature }
            }
            BgkError::NegativeDistribution { node, value, .. } => {
                BgkError::NegativeDistribution { cell, node, value }
            }
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, BgkError>;
