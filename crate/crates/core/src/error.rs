use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("image has zero size")]
    EmptyImage,

    #[error("pixel buffer holds {len} values but the image is {width}x{height}")]
    PixelCount {
        width: usize,
        height: usize,
        len: usize,
    },

    #[error("pixel value {0} is negative or not finite")]
    InvalidPixel(f64),

    #[error("dimension mismatch: expected {}x{}, got {}x{}", expected.0, expected.1, actual.0, actual.1)]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("factor {factor} does not divide {width}x{height}")]
    NotDivisible {
        width: usize,
        height: usize,
        factor: usize,
    },

    #[error("frame stack is empty")]
    EmptyStack,

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("impossible tile geometry: {0}")]
    TileGeometry(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by incompatible image or stack shapes.
    pub fn is_dimension_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::NotDivisible { .. }
                | Error::TileGeometry(_)
                | Error::EmptyImage
                | Error::PixelCount { .. }
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
