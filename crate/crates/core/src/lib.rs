//! Evaluation and analysis toolkit for multiple human parsing.

pub mod combine;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod harness;
pub mod instance_metrics;
pub mod losses;
pub mod model;
pub mod rescoring;
pub mod semantic_metrics;

pub use error::{Error, Result, ValidationError, Violation};
pub use model::{
    BBox, CategorySet, ImageRecord, ImageRecordParts, Instance, InstanceParts, LabelMap,
    PixelRect, ProbMap, BACKGROUND,
};
