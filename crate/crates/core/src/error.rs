use std::io;

/// Errors produced by the polarimetric transport library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty Mueller chain")]
    EmptyChain,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("time bin overflow: path `{path}` lands in bin {bin} but the tensor has {bins} bins")]
    TimeBinOverflow {
        path: String,
        bin: usize,
        bins: usize,
    },

    #[error("degenerate design matrix (all entries zero)")]
    DegenerateDesign,

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("optimization diverged at iteration {iteration}: loss {loss:.6e} exceeds 1e3 x initial {initial:.6e}")]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDesign | Error::Degenerate(_) | Error::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
