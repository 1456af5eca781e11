use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max entrywise deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("trace {actual:.6e} deviates from declared value {declared:.6e}")]
    TraceMismatch { actual: f64, declared: f64 },

    #[error("eigenvalue {value:.3e} below positive-semidefinite tolerance")]
    NotPositiveSemidefinite { value: f64 },

    #[error("flow is singular or ill-conditioned (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("non-finite entries encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("state vector norm {norm} is not 1 within tolerance")]
    NotNormalized { norm: f64 },

    #[error("pairing constraint violated at t = {t}: c = {c:.6e}, bound = {bound:.6e} (margin {margin:.3e})")]
    PairingConstraint { t: f64, c: f64, bound: f64, margin: f64 },

    #[error("negative forward rate {rate:.6e} for channel {channel} at t = {t}")]
    NegativeForwardRate { channel: usize, rate: f64, t: f64 },

    #[error("total per-step jump probability {probability:.4} exceeds 0.5 at t = {t}; reduce the time step")]
    StepSizeViolation { t: f64, probability: f64 },

    #[error("POVM padding remainder is not positive semidefinite at t = {t} (min eigenvalue {min_eig:.3e})")]
    PaddingRemainder { t: f64, min_eig: f64 },

    #[error("compatibility angle out of range at t = {t}: |cos| = {cos_abs:.6} > 1")]
    AngleOutOfRange { t: f64, cos_abs: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
