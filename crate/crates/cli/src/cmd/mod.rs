pub mod al;
pub mod cost;
pub mod dataset;
pub mod eval;
pub mod mosaic;
pub mod report;
