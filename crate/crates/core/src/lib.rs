//! Dataset engineering and evaluation toolkit for tooth detection,
//! segmentation, and numbering on panoramic radiographs.
//!
//! The crate covers the data side of a detection pipeline: COCO dataset
//! parsing and validation, preprocessing (histogram equalization, crop /
//! pad / resize), deterministic multi-label stratified splitting,
//! annotation-aware augmentation, synthesis of new panoramics from a tooth
//! bank, set-matching losses, prediction scoring, and rule-based
//! post-processing of detector outputs.

pub mod augment;
pub mod coco;
pub mod dental;
pub mod error;
pub mod eval;
pub mod imgproc;
pub mod matching;
pub mod postproc;
pub mod raster;
pub mod seeding;
pub mod split;
pub mod synth;

pub use dental::{
    dentition_counterpart, mirror_class, AnnotatedImage, BBox, PolygonMask, Prediction,
    ToothAnnotation, ToothClass,
};
pub use error::{Error, Result};
pub use raster::{BitMask, GrayImage};
