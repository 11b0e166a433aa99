//! Spectral decoupling (an L2 penalty on logits) with desk-scale models,
//! synthetic shortcut benchmarks, blur/sharpen/stain perturbations, ROC
//! statistics and overlapping tile extraction.

pub mod error;
pub mod experiment;
pub mod image;
pub mod metrics;
pub mod perturb;
pub mod rng;
pub mod specnet;
pub mod stain;
pub mod synthgen;
pub mod tiler;

pub use error::{Error, Result};
pub use image::Image;
