//! Page-level handwritten OCR as two stages: word detection, then word
//! recognition.
//!
//! The crate bundles everything needed to run and compare such pipelines
//! without a trained model:
//!
//! - [`geometry`]: boxes, IoU, one-to-one matching
//! - [`imaging`]: the raster primitives everything else is built on
//! - [`wordprep`]: raw word scan to tight binary crop
//! - [`synthgen`]: procedural handwriting-like word renderer and word pools
//! - [`composer`]: lays word crops onto fixed-size labelled pages
//! - [`pipeline`]: detector/recognizer stages, built-ins, ground-truth
//!   oracles, the external adapter protocol, page inference
//! - [`metrics`]: detection P/R/F1, CRR/WRR, latency
//! - [`reporting`]: hOCR/JSON/text transcripts, reconstructions, CSV and SVG
//! - [`config`] and [`eval`]: run configuration and whole-dataset evaluation

pub mod composer;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod metrics;
pub mod pipeline;
pub mod reporting;
pub mod synthgen;
pub mod text;
pub mod wordprep;

pub use geometry::{iou, match_boxes, BBox, Matching};
pub use imaging::{BinaryImage, GrayImage};
