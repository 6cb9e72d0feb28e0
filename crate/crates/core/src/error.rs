use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the odometry pipeline.
#[derive(Debug, Error)]
pub enum VioError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A projection or alignment fell outside the image. Callers drop or park the feature.
    #[error("point is out of view")]
    OutOfView,

    #[error("rejected IMU sample: {0}")]
    RejectedSample(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    /// `row` is a 1-based file line; 0 refers to the file as a whole.
    #[error("{file}: {}{message}", row_label(*row))]
    Ingest {
        file: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
}

fn row_label(row: usize) -> String {
    if row == 0 {
        String::new()
    } else {
        format!("row {row}: ")
    }
}

pub type Result<T> = std::result::Result<T, VioError>;

impl VioError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        VioError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VioError::Io {
            path: path.into(),
            source,
        }
    }
}
