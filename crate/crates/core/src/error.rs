use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OemtError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model validation failed: {0}")]
    Validation(String),

    #[error("operation requires exactly two mechanical modes, model has {0}")]
    NeedsTwoModes(usize),

    #[error("degenerate response at {freq_hz} Hz: xi1*xi2 - beta^2 vanishes")]
    DegenerateResponse { freq_hz: f64 },

    #[error("first-order formula assumes lambda = 0")]
    FirstOrderNeedsZeroLambda,

    #[error("interference function vanishes at {freq_hz} Hz")]
    NullInterference { freq_hz: f64 },

    #[error("singular linear system at {freq_hz} Hz")]
    SingularSystem { freq_hz: f64 },

    #[error("solver residual {residual:e} exceeds tolerance at {freq_hz} Hz")]
    Residual { freq_hz: f64, residual: f64 },

    #[error("model is unstable (max real part of poles {margin:e} rad/s)")]
    Unstable { margin: f64 },

    #[error("membrane touches the electrode (gap {min_gap:e} m)")]
    Contact { min_gap: f64 },

    #[error("fit did not converge after {iterations} iterations (residual norm {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no resonance peak in fit window (peak/floor ratio {ratio:.3})")]
    NoPeak { ratio: f64 },

    #[error("floor overestimate: net integral {0:e} is negative")]
    FloorOverestimate(f64),

    #[error("non-softening curve: frequency increases with bias squared")]
    NonSoftening,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl OemtError {
    /// Stable machine-readable code, used as the CLI stderr prefix.
    pub fn code(&self) -> &'static str {
        match self {
            OemtError::InvalidInput(_) => "E_INPUT",
            OemtError::Validation(_) => "E_VALIDATION",
            OemtError::NeedsTwoModes(_) => "E_TWO_MODES",
            OemtError::DegenerateResponse { .. } => "E_DEGENERATE",
            OemtError::FirstOrderNeedsZeroLambda => "E_FIRST_ORDER_LAMBDA",
            OemtError::NullInterference { .. } => "E_NULL",
            OemtError::SingularSystem { .. } => "E_SINGULAR",
            OemtError::Residual { .. } => "E_RESIDUAL",
            OemtError::Unstable { .. } => "E_UNSTABLE",
            OemtError::Contact { .. } => "E_CONTACT",
            OemtError::NoConvergence { .. } => "E_NO_CONVERGENCE",
            OemtError::NoPeak { .. } => "E_NO_PEAK",
            OemtError::FloorOverestimate(_) => "E_FLOOR",
            OemtError::NonSoftening => "E_NON_SOFTENING",
            OemtError::Parse(_) => "E_PARSE",
            OemtError::Io(_) => "E_IO",
        }
    }
}

pub type Result<T> = std::result::Result<T, OemtError>;
