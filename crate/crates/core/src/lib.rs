//! Learned sRGB <-> RAW camera pipeline modeling with a shot/read noise
//! switch, synthetic clean/noisy pair generation, RAW and sRGB denoisers,
//! and reference-guided color matching.

pub mod app;
pub mod bayer;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod noise;
pub mod pipeline;
pub mod nn;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
