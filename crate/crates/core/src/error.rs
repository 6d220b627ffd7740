use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{layer}: expected input shape {expected}, got {got:?}")]
    LayerShape {
        layer: String,
        expected: String,
        got: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("spatial size underflow: {0}")]
    SpatialUnderflow(String),

    #[error("{0}: backward called before forward")]
    BackwardBeforeForward(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("class mismatch: {0}")]
    ClassMismatch(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: Vec<u8> },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checkpoint tensor {name} has shape {found:?}, config implies {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a failure at run time.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::InvalidConfig(_)
                | Error::SpatialUnderflow(_)
                | Error::LabelOutOfRange { .. }
                | Error::ClassMismatch(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
