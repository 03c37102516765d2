use thiserror::Error;

use crate::energy::EnergyReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid kernel: {0}")]
    Kernel(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("operation not supported by this history representation: {0}")]
    UnsupportedMode(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("non-finite values at t = {t} (step {step})")]
    BlowUp {
        t: f64,
        step: usize,
        last_report: Option<Box<EnergyReport>>,
    },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
