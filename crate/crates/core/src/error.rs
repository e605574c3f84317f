use thiserror::Error;

use crate::transfer::TraceEntry;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("image size {got} is below the network minimum of {min}")]
    SizeError { got: usize, min: usize },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("duplicate record id `{0}`")]
    DuplicateRecord(String),

    #[error("duplicate design id `{0}`")]
    DuplicateDesign(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("score {0} is outside 1..=5")]
    Range(i64),

    #[error("no ratings for {0}")]
    NoData(String),

    #[error("non-finite loss at iteration {iteration}")]
    Numerical {
        iteration: usize,
        trace: Vec<TraceEntry>,
    },

    #[error("asset error: {0}")]
    Asset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),

    #[error("storage: {0}")]
    Storage(#[from] rusqlite::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidImage(_) => "invalid_image",
            Error::SizeError { .. } => "size_error",
            Error::UnknownLayer(_) => "unknown_layer",
            Error::Argument(_) => "argument_error",
            Error::Dimension { .. } => "dimension_error",
            Error::Shape(_) => "shape_error",
            Error::DuplicateRecord(_) => "duplicate_record",
            Error::DuplicateDesign(_) => "duplicate_design",
            Error::NotFound(_) => "not_found",
            Error::Range(_) => "range_error",
            Error::NoData(_) => "no_data",
            Error::Numerical { .. } => "numerical_error",
            Error::Asset(_) => "asset_error",
            Error::Io(_) => "io_error",
            Error::Codec(_) => "codec_error",
            Error::Storage(_) => "storage_error",
            Error::Json(_) => "json_error",
            Error::Csv(_) => "csv_error",
        }
    }
}
