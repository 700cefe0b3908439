//! Geometry, file formats and data preparation for point-cloud streamline
//! segmentation.

pub mod error;
pub mod metrics;
pub mod qbx;
pub mod representation;
pub mod streamline;
pub mod synth;
pub mod tck;
pub mod tokenizer;

pub use error::{Error, Result};
pub use streamline::{mdf, resample, Labels, Point, Streamline, Tractogram};
