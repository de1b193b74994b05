use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the evaluation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {width}x{height}: {reason}")]
    InvalidDimensions { width: u32, height: u32, reason: String },

    #[error("dimension mismatch: {left} is {left_w}x{left_h}, {right} is {right_w}x{right_h}")]
    DimensionMismatch {
        left: &'static str,
        left_w: u32,
        left_h: u32,
        right: &'static str,
        right_w: u32,
        right_h: u32,
    },

    #[error("{map} label {label} at (x={x}, y={y}) is out of range for {num_classes} classes")]
    LabelOutOfRange {
        map: &'static str,
        label: u32,
        x: u32,
        y: u32,
        num_classes: usize,
    },

    #[error("class count mismatch: expected {expected}, found {found}")]
    ClassCountMismatch { expected: usize, found: usize },

    #[error("empty evaluation domain: no non-ignore ground-truth pixels")]
    EmptyEvaluationDomain,

    #[error("no scorable content: every score is NULL")]
    NoScorableContent,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("soft vector component {index} = {value} lies outside [0, 1]")]
    OutOfUnitInterval { index: usize, value: f64 },

    #[error("manifest parse error at line {line}, column {column}: {message}")]
    ManifestParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("manifest validation failed: {0} finding(s)")]
    ManifestInvalid(usize),

    #[error("{path}: label maps must be single-channel")]
    MultiChannel { path: PathBuf },

    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("instance id {id} appears in the grid but has no class entry")]
    UnknownInstance { id: u32 },

    #[error("image {image_id}: {source}")]
    InImage {
        image_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn in_image(self, image_id: &str) -> Error {
        Error::InImage {
            image_id: image_id.to_string(),
            source: Box::new(self),
        }
    }

    /// True when the root cause is a filesystem failure rather than bad data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::InImage { source, .. } => source.is_io(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
