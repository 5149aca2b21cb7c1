use thiserror::Error;

/// Errors produced by the metric pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Too few samples for an estimator or a fit.
    #[error("{what} needs at least {needed} samples, got {found}")]
    InsufficientSamples {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("degenerate bandwidth: median pairwise squared distance is zero")]
    DegenerateBandwidth,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("degradation type {type_id} level {level}, image {image}: {source}")]
    Cell {
        type_id: u8,
        level: u8,
        image: String,
        #[source]
        source: Box<Error>,
    },

    #[error("feature extraction failed for layer {layer}, image {image}: {message}")]
    Inference {
        layer: usize,
        image: String,
        message: String,
    },

    #[error("image codec: {0}")]
    Codec(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }

    /// Wraps `self` with the coordinates of the degradation cell that failed.
    pub fn in_cell(self, type_id: u8, level: u8, image: impl Into<String>) -> Self {
        Error::Cell {
            type_id,
            level,
            image: image.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
