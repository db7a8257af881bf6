use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least 2 fermionic modes, got {0}")]
    InvalidModeCount(usize),

    #[error("site {site} out of range for {n_modes} modes")]
    SiteOutOfRange { site: usize, n_modes: usize },

    #[error("particle number {particles} out of range for {n_modes} modes")]
    ParticlesOutOfRange { particles: usize, n_modes: usize },

    #[error("matrix is not Hermitian (defect {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("operator mixes particle-number sectors (out-of-sector element {magnitude:e})")]
    NonBlockDiagonal { magnitude: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("eigendecomposition did not converge")]
    EigenConvergence,

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("input {0} outside [0, 1]")]
    InputOutOfRange(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid reservoir configuration: {0}")]
    InvalidReservoir(String),

    #[error("too few levels: {found} inside the window, need at least {needed}")]
    TooFewLevels { found: usize, needed: usize },

    #[error("spacing ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("spectra have inconsistent lengths ({expected} vs {found})")]
    InconsistentSector { expected: usize, found: usize },

    #[error("spectral form factor does not settle on its plateau within the time grid")]
    NotSaturated,

    #[error("history window {window} does not fit in a sequence of length {len}")]
    HistoryTooLong { window: usize, len: usize },

    #[error("NARMA recursion diverged at step {step} (value {value:e})")]
    Diverged { step: usize, value: f64 },

    #[error("zero variance: R² is undefined")]
    ZeroVariance,

    #[error("target has zero norm")]
    ZeroNormTarget,

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed coupling dump: {0}")]
    MalformedDump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
