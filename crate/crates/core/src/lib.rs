//! Data preparation and evaluation toolkit for SAR maritime object detection.
//!
//! The crate turns multi-channel SAR scenes plus point labels into
//! normalized 3-channel training patches with COCO-style box annotations,
//! ships a small threshold-based reference detector, and scores point
//! predictions with the F1_D / F1_S / F1_V / F1_F family and their Avg-F1
//! aggregate.
//!
//! Module map:
//!
//! * [`model`]: shared value types (rasters, scenes, labels, patches, reports)
//! * [`ingest`]: raster, CSV and JSON readers/writers plus the synthetic scene generator
//! * [`preprocess`]: tiling, min-max normalization and channel fusion
//! * [`annotate`]: label filtering, box synthesis and COCO export
//! * [`refdetect`]: threshold + connected-component reference detector
//! * [`score`]: point matching and the F1 metric family
//! * [`pipeline`]: scene-level compositions used by the command line tool

pub mod annotate;
pub mod error;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod refdetect;
pub mod score;

pub use error::{Error, ErrorClass, Result};
