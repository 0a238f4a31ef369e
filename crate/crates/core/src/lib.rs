//! Monocular birds-eye-view semantic segmentation.
//!
//! The pipeline: a small convolutional pyramid extracts perspective features,
//! column-wise transformer decoders lift each image column onto its ground
//! ray, a BEV→PV→BEV cycle recalibrates those polar features, the result is
//! resampled onto a metric Cartesian grid, fused with ego-motion-aligned
//! history from a memory bank and decoded into per-class occupancy.
//! Everything trains on a procedurally generated world.

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod loss;
pub mod parallel;
pub mod temporal;
pub mod synth;
pub mod tensor;
pub mod view;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
