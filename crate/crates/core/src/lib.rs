//! Cell detection with tissue context.
//!
//! Geometry for aligning a small high-resolution cell patch with a larger
//! low-resolution tissue patch, point-label rasterization, peak-based
//! post-processing, detection metrics, dataset tooling and a small
//! dual-branch network used to compare ways of feeding tissue context into a
//! cell detector.

pub mod dataio;
pub mod error;
pub mod field;
pub mod geometry;
pub mod labels;
pub mod metrics;
pub mod postprocess;
pub mod stats;
pub mod tinynet;
pub mod tissue;

pub use error::{DataError, FieldError, GeometryError, LabelError, MetricsError, NetError};
pub use field::ScalarField;
pub use geometry::{
    crop_and_upsample, crop_window, downsample_and_pad, FieldKind, PatchGeometry, Point, ResampleMode,
    WindowRect,
};
pub use labels::{CellLabelMap, CellPoint, BC, TC};
pub use metrics::{F1Report, MatchCounts, RunSummary};
pub use postprocess::{ConstraintMode, DetectionSet, ProbabilityMap};
pub use tissue::{TissueClass, TissueMask};
