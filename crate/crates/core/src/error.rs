use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("qubit count mismatch: {left} vs {right}")]
    QubitMismatch { left: usize, right: usize },

    #[error("unsupported qubit count {0} (must be between 1 and {max})", max = crate::pauli::MAX_QUBITS)]
    QubitCount(usize),

    #[error("locality {locality} out of range for {n_qubits} qubits")]
    LocalityOutOfRange { locality: usize, n_qubits: usize },

    #[error("requested {requested} constraints but the pool holds only {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("invalid operator pool: {0}")]
    InvalidPool(String),

    #[error("invalid Pauli string {0:?}")]
    ParsePauli(String),

    #[error("expected {expected} parameters, got {got}")]
    ParameterLength { expected: usize, got: usize },

    #[error("parameter index {index} out of range for {n_params} parameters")]
    ParameterIndex { index: usize, n_params: usize },

    #[error("invalid ansatz: {0}")]
    InvalidAnsatz(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("dimension too large for dense computation: {n_qubits} qubits (limit {limit})")]
    TooLarge { n_qubits: usize, limit: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("identity is not a valid constraint or estimation target")]
    IdentityString,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("normal matrix is singular even after regularisation")]
    Singular,

    #[error("zero derivative; single-constraint Newton step undefined")]
    ZeroDerivative,

    #[error("all derivatives vanish for the disturbed parameter")]
    Degenerate,

    #[error("malformed record: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
