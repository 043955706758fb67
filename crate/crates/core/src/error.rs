use thiserror::Error;

pub type Result<T> = std::result::Result<T, CtcError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CtcError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("gate is not unitary (max |UU^dag - I| = {0:e})")]
    NotUnitary(f64),

    #[error("Kraus operators are not complete (max |sum E^dag E - I| = {0:e})")]
    IncompleteChannel(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown gate `{0}`")]
    UnknownGate(String),

    #[error("unknown state symbol `{0}`")]
    UnknownSymbol(String),

    #[error("unrolled circuit dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),
}
