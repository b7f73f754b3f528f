use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("characteristic with energy {energy} does not reach depth {eta}")]
    OutOfReach { energy: f64, eta: f64 },

    #[error("no turning point: |E| = {energy} is below e^-V(L) = {threshold}")]
    NoTurning { energy: f64, threshold: f64 },

    #[error("incompatible boundary data: defect {defect:.6e}")]
    Incompatible { defect: f64 },

    #[error("source iteration did not converge after {iterations} sweeps (last residual {last:.3e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        residual_history: Vec<f64>,
    },

    #[error("maximum principle violated at sweep {sweep}: {value:.6e} > {bound:.6e}")]
    MaximumPrinciple { sweep: usize, value: f64, bound: f64 },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("grid mismatch")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported boundary family: {0}")]
    UnsupportedFamily(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
