use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Evaluation at the load point itself, where the half-space solution is singular.
    #[error("singular point: {0}")]
    Singular(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate kernel: all taps are zero")]
    DegenerateKernel,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("kernel with {taps} taps does not fit a profile of length {len}")]
    KernelTooLong { taps: usize, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("speed is undefined for a trajectory with fewer than two points")]
    UndefinedSpeed,
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
