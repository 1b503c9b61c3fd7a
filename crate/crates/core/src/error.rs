use thiserror::Error;

/// Errors raised by the spin-dynamics and pulse-design routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spin system: {0}")]
    InvalidSystem(String),

    #[error("spin index {index} out of range for {n_spins} spin(s)")]
    SpinIndex { index: usize, n_spins: usize },

    #[error("spin count must be between 1 and {max}, got {got}")]
    SpinCount { got: usize, max: usize },

    #[error("unknown spin `{0}`")]
    UnknownSpin(String),

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("channel `{0}` has no spins assigned")]
    EmptyChannel(String),

    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("matrix is not {property} (deviation {deviation:.3e})")]
    Property {
        property: &'static str,
        deviation: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid pulse: {0}")]
    InvalidPulse(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("zero-norm argument to fidelity")]
    ZeroNorm,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid deviation: {0}")]
    InvalidDeviation(String),

    #[error("invalid acquisition: {0}")]
    InvalidAcquisition(String),

    #[error("integration windows overlap: `{0}` and `{1}`")]
    OverlappingWindows(String, String),

    #[error("pulse file line {line}: {message}")]
    PulseFormat { line: usize, message: String },

    #[error("eigendecomposition failed to converge")]
    Eigen,
}

pub type Result<T> = std::result::Result<T, Error>;
