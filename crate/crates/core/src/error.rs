use alloc::string::String;

/// Errors raised by the numerical core and the model blocks built on it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix is not diagonalizable (basis condition number {condition:e})")]
    NonDiagonalizable { condition: f64 },
    #[error("eigendecomposition of a nonsymmetric matrix requires explicit factors")]
    NonSymmetric,
    #[error("batch normalization in train mode needs at least 2 rows, got {rows}")]
    DegenerateBatch { rows: usize },
    #[error("loss is not deterministic: {first} vs {second}")]
    NonDeterministicLoss { first: f64, second: f64 },
    #[error("ODE state blew up at t={time} (Frobenius norm {norm:e})")]
    Blowup { time: f64, norm: f64 },
    #[error("ODE state blew up in conversation `{conversation}` at t={time} (Frobenius norm {norm:e})")]
    ConversationBlowup { conversation: String, time: f64, norm: f64 },
    #[error("feature row {row} has zero norm")]
    ZeroNormFeature { row: usize },
    #[error("regularized adjacency eigenvalue {eigenvalue:e} is not positive")]
    NonPositiveSpectrum { eigenvalue: f64 },
    #[error("resonant spectrum: denominator {denominator:e}")]
    ResonantSpectrum { denominator: f64 },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` already registered")]
    DuplicateParam(String),
    #[error("metrics need at least one labeled utterance")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
