//! Field-of-interest proposal for mitotic counting on whole-slide histology
//! images.
//!
//! Given a mitotic-figure segmentation map (from a pluggable detector) and
//! the slide raster, the pipeline computes a valid-tissue mask, a
//! moving-average mitotic-density map, and proposes the 10-HPF region with
//! the highest estimated mitotic count. An evaluation harness correlates
//! the estimates against annotated ground truth and reports box-whisker
//! statistics and proposal ranks per slide.

pub mod annotations;
pub mod density;
pub mod detector;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod tissue_mask;

pub use error::{FoiError, Result};
pub use raster::{GrayPlane, ImagePlane, Rect, RgbRaster, SlideGeometry};
