//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the tensor engine, models, I/O and evaluation code.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor extents are inconsistent for the requested operation.
    Shape { op: &'static str, detail: String },
    /// The caller violated an operation contract (bad argument, empty input, ...).
    Usage(String),
    /// A model or pipeline configuration is invalid.
    Config(String),
    /// A file does not conform to its on-disk format. `offset` is the byte
    /// position at which decoding failed.
    Format { offset: usize, detail: String },
    /// A checkpoint file is corrupt or disagrees with the target model.
    Checkpoint(String),
    /// A dataset directory is malformed; carries one message per offender.
    Manifest(Vec<String>),
    /// Training produced a non-finite loss.
    Divergence { epoch: usize, batch: usize },
    /// A named entity (layer, metric key, ...) was not found.
    Lookup { wanted: String, valid: Vec<String> },
    /// A tensor holds NaN or infinite values.
    NonFinite { context: String },
    /// The optimizer was asked to step a parameter without a gradient.
    Optimizer(String),
    /// Batch statistics are undefined for a batch this small.
    DegenerateBatch { elements: usize },
    /// A segmentation model was used where a classifier was expected, or vice versa.
    TaskMismatch { expected: &'static str, actual: &'static str },
    /// Transposed convolution only supports 2x2 kernels.
    UnsupportedKernel { kh: usize, kw: usize },
    /// Every activation channel was constant; no CAM can be formed.
    EmptyCam,
    /// ROC is undefined when the truth labels contain a single class.
    UndefinedRoc,
    /// Localization score is undefined for an identically-zero heatmap.
    UndefinedScore,
    /// Wrapped I/O failure with path context.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "{op}: dimension error: {detail}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Format { offset, detail } => {
                write!(f, "format error at byte {offset}: {detail}")
            }
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Manifest(items) => {
                write!(f, "dataset manifest error: {}", items.join("; "))
            }
            Error::Divergence { epoch, batch } => {
                write!(f, "divergence: non-finite loss at epoch {epoch}, batch {batch}")
            }
            Error::Lookup { wanted, valid } => {
                write!(f, "unknown id {wanted:?}; valid ids: {}", valid.join(", "))
            }
            Error::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
            Error::Optimizer(msg) => write!(f, "optimizer error: {msg}"),
            Error::DegenerateBatch { elements } => {
                write!(f, "degenerate batch: {elements} element(s), need at least 2")
            }
            Error::TaskMismatch { expected, actual } => {
                write!(f, "task mismatch: expected a {expected} model, got {actual}")
            }
            Error::UnsupportedKernel { kh, kw } => {
                write!(f, "unsupported kernel {kh}x{kw}: up-convolution requires 2x2")
            }
            Error::EmptyCam => write!(f, "empty CAM: all activation channels are constant"),
            Error::UndefinedRoc => write!(f, "ROC undefined: truths contain a single class"),
            Error::UndefinedScore => write!(f, "localization score undefined for zero heatmap"),
            Error::Io(msg) => write!(f, "I/O error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    /// Wrap an I/O failure with the path it concerns.
    pub fn io(path: &std::path::Path, err: std::io::Error) -> Error {
        Error::Io(format!("{}: {err}", path.display()))
    }
}
