use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("block size must be at least 1")]
    ZeroBlockSize,

    #[error("mask grid is {got_rows}x{got_cols}, expected {expected_rows}x{expected_cols}")]
    MaskShape { expected_rows: usize, expected_cols: usize, got_rows: usize, got_cols: usize },

    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated stream: needed {needed} more bytes while reading {what}")]
    Truncated { what: &'static str, needed: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("iteration {iteration} is past the end of the schedule (m = {total})")]
    IterationOutOfRange { iteration: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called without saved activations from a forward pass")]
    MissingActivations,

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f32 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> Error {
    Error::DimensionMismatch { op, detail: detail.into() }
}
