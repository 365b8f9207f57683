use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model graph contains a cycle through node `{0}`")]
    Cycle(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("observed node `{0}` has children; observed variables must be leaves")]
    ObservedNotLeaf(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("input {0} is not bound")]
    UnboundInput(usize),
    #[error("scale of node `{0}` is below the numerical floor; declare it deterministic instead")]
    ZeroScale(String),
    #[error("unsupported family for this transform: {0}")]
    UnsupportedFamily(String),
    #[error("transform is not invertible at the supplied point: {0}")]
    NonInvertible(String),
    #[error("matrix block is not negative definite")]
    NotNegativeDefinite,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("sign error: {0}")]
    Sign(String),
    #[error("step size underflow ({0:e})")]
    StepUnderflow(f64),
    #[error("series has zero variance")]
    ConstantSeries,
    #[error("series too short: {len} < {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("E-step requires at least one sample")]
    EmptyESample,
    #[error("bad IDX magic number {0:#010x}")]
    BadMagic(u32),
    #[error("IDX file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 3 for numerical failures at run time, 2 for
    /// configuration, model and input problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_)
            | Error::NotNegativeDefinite
            | Error::StepUnderflow(_)
            | Error::ConstantSeries
            | Error::SeriesTooShort { .. }
            | Error::NonInvertible(_) => 3,
            _ => 2,
        }
    }
}
