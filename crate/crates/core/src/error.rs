//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid FDI tooth code {0}")]
    InvalidToothCode(i64),

    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("degenerate mask: polygon covers no pixel")]
    DegenerateMask,

    #[error("empty image")]
    EmptyImage,

    #[error("raster size mismatch: {0}")]
    RasterSizeMismatch(String),

    #[error("mask dimension mismatch: {0}x{1} vs {2}x{3}")]
    MaskDimensionMismatch(u32, u32, u32, u32),

    #[error("crop region does not intersect the image")]
    EmptyRoiIntersection,

    #[error("JSON parse error in {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },

    #[error("dataset validation failed: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    ImageCodec {
        path: String,
        source: image::ImageError,
    },

    #[error("invalid split specification: {0}")]
    InvalidSplitSpec(String),

    #[error("cannot split an empty dataset")]
    EmptyDataset,

    #[error("invalid augmentation parameter: {0}")]
    InvalidAugmentParam(String),

    #[error("no empty panoramics available")]
    NoEmptyPanoramics,

    #[error("cost matrix is not square: {rows} rows, {cols} cols")]
    NonSquareCostMatrix { rows: usize, cols: usize },

    #[error("cost matrix contains a non-finite entry at ({0}, {1})")]
    NonFiniteCost(usize, usize),

    #[error("class probability vector of slot {slot} sums to {sum}, expected 1")]
    UnnormalizedProbabilities { slot: usize, sum: f64 },

    #[error("{preds} prediction slots cannot cover {gts} ground-truth objects")]
    TooFewSlots { preds: usize, gts: usize },

    #[error("unknown image id {0} in prediction file")]
    UnknownImageId(u64),

    #[error("evaluation requires a non-empty ground truth")]
    EmptyGroundTruth,

    #[error("invalid evaluation config: {0}")]
    InvalidEvalConfig(String),

    #[error("invalid section geometry: {0}")]
    InvalidSectionGeometry(String),
}

pub type Result<T> = std::result::Result<T, Error>;
