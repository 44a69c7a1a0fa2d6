//! Active-learning and data-pipeline engine for small-object detection
//! datasets in the YOLO layout.

pub mod al;
pub mod dataset;
pub mod detector;
pub mod eval;
pub mod mosaic;
pub mod scale;
pub mod seed;
pub mod cost;
pub mod synth;
pub mod report;
