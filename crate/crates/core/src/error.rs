use thiserror::Error;

/// Errors produced anywhere in the simulator and codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("spin count {0} out of range (supported: 1..={max})", max = crate::ops::MAX_SPINS)]
    SpinCount(usize),

    #[error("validation error: {0}")]
    Validation(String),

    #[error(
        "waveform undersampled: {n_steps} steps over {duration_s} s cannot represent {max_freq_hz} Hz \
         (need at least {required})"
    )]
    Aliasing {
        n_steps: usize,
        duration_s: f64,
        max_freq_hz: f64,
        required: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("frequency {freq_hz} Hz lies outside the spectral axis [{lo_hz}, {hi_hz}] Hz")]
    OutOfRange { freq_hz: f64, lo_hz: f64, hi_hz: f64 },

    #[error("amplitudes show no separation between classes")]
    NoSeparation,

    #[error("numerical contract violated: {0}")]
    Numerical(String),

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("linear algebra failure: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::Linalg(_) => 3,
            Error::NoSeparation => 4,
            Error::Row { source, .. } => source.exit_code(),
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}
