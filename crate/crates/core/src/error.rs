use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("scene {scene_id}: VV is {vv_width}x{vv_height} but VH is {vh_width}x{vh_height}")]
    ChannelDimensionMismatch {
        scene_id: String,
        vv_width: usize,
        vv_height: usize,
        vh_width: usize,
        vh_height: usize,
    },

    #[error("unsupported raster format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("missing required column `{0}`")]
    CsvSchema(String),

    /// `row` is the 1-based data row number; the header is not counted.
    #[error("row {row}: {message}")]
    RowParse { row: usize, message: String },

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("unknown scene `{0}`")]
    UnknownScene(String),

    #[error("synthetic scene spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tiff: {0}")]
    Tiff(#[from] tiff::TiffError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error families, used by the command line tool to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Schema,
    Config,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Csv(e) if e.is_io_error() => ErrorClass::Io,
            Error::Tiff(tiff::TiffError::IoError(_)) => ErrorClass::Io,
            Error::Json(e) if e.is_io() => ErrorClass::Io,
            Error::Spec(_) | Error::Config(_) => ErrorClass::Config,
            _ => ErrorClass::Schema,
        }
    }
}
