//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Rotation matrix is not orthonormal with determinant +1, or translation is not finite.
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    /// Two inputs that must agree in length do not.
    #[error("size mismatch for {what}: expected {expected}, got {got}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An operation that requires a non-empty input received an empty one.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Diffusion step index outside [1, T].
    #[error("step {t} out of range [1, {t_max}]")]
    StepOutOfRange { t: usize, t_max: usize },

    /// The map region around a scan holds fewer points than requested.
    #[error("region too sparse: {available} points available, {required} required")]
    RegionTooSparse { available: usize, required: usize },

    /// Malformed file contents; the message carries the position (byte offset or line).
    #[error("format error: {0}")]
    Format(String),

    /// Configuration file contained a key this tool does not know.
    #[error("unknown config key: {0}")]
    UnknownConfigKey(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
