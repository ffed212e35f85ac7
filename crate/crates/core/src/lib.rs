//! Text-line segmentation for scanned handwritten pages, plus the scoring
//! and dataset utilities used to evaluate it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod components;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod hough;
pub mod lineclust;
pub mod morph;
pub mod pipeline;
pub mod raster;
pub mod runner;
pub mod synth;

pub use error::{Error, Result};
