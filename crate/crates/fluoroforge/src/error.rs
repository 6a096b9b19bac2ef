use std::path::PathBuf;

/// Process exit codes used by the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const DIMENSION: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
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

    #[error("{path}: expected a 16-bit grayscale PNG, found {found}")]
    PixelFormat { path: PathBuf, found: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("frame count mismatch: manifest lists {expected} frames, found {found}")]
    FrameCountMismatch { expected: usize, found: usize },

    #[error("{path}: frame is {actual_w}x{actual_h} but the manifest says {expected_w}x{expected_h}")]
    FrameShape {
        path: PathBuf,
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] fluoroforge_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => exit::USAGE,
            Error::FrameShape { .. } => exit::DIMENSION,
            Error::Core(e) if e.is_dimension_error() => exit::DIMENSION,
            Error::Core(fluoroforge_core::Error::InvalidParameter { .. }) => exit::USAGE,
            Error::Core(_) => exit::IO,
            Error::Io { .. }
            | Error::Image { .. }
            | Error::PixelFormat { .. }
            | Error::Json { .. }
            | Error::FrameCountMismatch { .. } => exit::IO,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
