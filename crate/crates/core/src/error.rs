use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FusionError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("image size {h}x{w} is not a multiple of 4 and padding is disabled")]
    Padding { h: usize, w: usize },

    #[error("registration error: infrared is {ir_w}x{ir_h} but visible is {vis_w}x{vis_h} (pairs must be co-registered)")]
    Registration {
        ir_w: usize,
        ir_h: usize,
        vis_w: usize,
        vis_h: usize,
    },

    #[error("unsupported image {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("checkpoint format version {found} is not supported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl FusionError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FusionError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        FusionError::Dimension(msg.into())
    }
}
