use std::fmt;

/// Errors raised by the tensor substrate, the attention passes and the
/// analysis tooling.
#[derive(Debug)]
pub enum IssaError {
    /// Operand shapes do not line up.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A scalar argument is outside its domain.
    Parameter(String),
    /// An index map is not a bijection, or a stored structure is corrupt.
    Integrity(String),
    /// A requested materialization exceeds its configured cap.
    Resource(String),
    /// A NaN or infinity showed up where only finite values are allowed.
    NonFinite(&'static str),
    /// Malformed serialized input.
    Parse(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, IssaError>;

impl IssaError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        IssaError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        IssaError::Parameter(msg.into())
    }
}

impl fmt::Display for IssaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IssaError::Shape { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            IssaError::Parameter(msg) => write!(f, "invalid parameter: {msg}"),
            IssaError::Integrity(msg) => write!(f, "integrity error: {msg}"),
            IssaError::Resource(msg) => write!(f, "resource limit: {msg}"),
            IssaError::NonFinite(op) => write!(f, "{op}: produced a non-finite value"),
            IssaError::Parse(msg) => write!(f, "parse error: {msg}"),
            IssaError::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for IssaError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            IssaError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for IssaError {
    fn from(err: std::io::Error) -> Self {
        IssaError::Io(err)
    }
}
