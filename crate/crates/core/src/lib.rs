pub mod config;
pub mod dataset;
pub mod descriptor;
pub mod detectors;
pub mod error;
pub mod filter;
pub mod geometry;
pub mod image;
pub mod io;
pub mod klt;
pub mod labels;
pub mod loss;
pub mod net;
pub mod nms;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod succinctness;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Grayscale intensities in `[0, 1]`.
pub type GrayImage = image::Image<f32>;
pub type GrayImage64 = image::Image<f64>;
/// Per-pixel interest scores; only their order matters downstream.
pub type ScoreMap = image::Image<f32>;
pub type ScoreMap64 = image::Image<f64>;
/// Meters, 0 where invalid.
pub type DepthMap = image::Image<f64>;
/// Gradient of a loss with respect to a score map.
pub type ScoreGradient = image::Image<f32>;
