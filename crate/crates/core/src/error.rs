use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform for an operation.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A forward value or activation is NaN or infinite.
    NonFinite { location: String },
    /// A configuration value is out of its valid range.
    Config(String),
    /// A recording had no usable samples at all.
    EmptyRecording,
    /// A recording had usable samples, but fewer than the required length.
    TooShort { valid: usize, required: usize },
    /// A dataset split could not be formed.
    Split(String),
    /// Too many synthetic blobs for the grid depth.
    Capacity { blobs: usize, depth: usize },
    /// A diffusion timestep outside `1..=T`.
    Timestep { t: usize, max: usize },
    /// An input sequence was empty or shorter than required.
    Sequence(String),
    /// Saliency inputs were unusable (no fixations, mismatched sizes, ...).
    Saliency(String),
    /// A named parameter is missing or has the wrong shape.
    Param(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: dimension mismatch between {lhs:?} and {rhs:?}")
            }
            Error::NonFinite { location } => write!(f, "non-finite value in {location}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::EmptyRecording => f.write_str("recording has no valid samples"),
            Error::TooShort { valid, required } => write!(
                f,
                "recording rejected: {valid} valid samples, at least {required} required"
            ),
            Error::Split(msg) => write!(f, "cannot split dataset: {msg}"),
            Error::Capacity { blobs, depth } => {
                write!(f, "{blobs} blobs need orthogonal signatures but depth is {depth}")
            }
            Error::Timestep { t, max } => write!(f, "timestep {t} outside 1..={max}"),
            Error::Sequence(msg) => write!(f, "invalid sequence: {msg}"),
            Error::Saliency(msg) => write!(f, "saliency: {msg}"),
            Error::Param(msg) => write!(f, "parameter: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
