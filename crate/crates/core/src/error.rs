use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor extent did not match what the operation needs.
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        dim: String,
        expected: String,
        got: String,
    },

    #[error("{op}: reflect padding width {width} must be smaller than spatial extent {extent}")]
    ReflectPad {
        op: &'static str,
        width: usize,
        extent: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("spatial size {h}x{w} is not divisible by {factor}; reflect-pad the input to a multiple of {factor} first")]
    SpatialDivisibility { h: usize, w: usize, factor: usize },

    #[error("transmission {t} is below the floor t_min = {t_min}")]
    TransmissionFloor { t: f64, t_min: f64 },

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("backward requires a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),

    #[error("optimizer step requested but no gradients were computed since the last step")]
    MissingGradients,

    #[error("non-finite value first produced by op `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("malformed {format} data: {detail}")]
    Format {
        format: &'static str,
        detail: String,
    },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        dim: impl Into<String>,
        expected: impl std::fmt::Debug,
        got: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }

    pub(crate) fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            detail: detail.into(),
        }
    }
}
