//! Networks assembled from the attention blocks.

mod config;
mod cycle;
mod denoiser;
mod raw2rgb;
mod rgb2raw;

pub use config::{BranchConfig, ColorConfig, CycleConfig, DenoiseMode, DenoiserConfig};
pub use cycle::{CycleCache, CycleIsp, CycleOutput, NoiseSwitch};
pub use denoiser::{Denoiser, DenoiserCache};
pub use raw2rgb::{ColorGate, Raw2Rgb, Raw2RgbCache};
pub use rgb2raw::{Rgb2Raw, Rgb2RawCache, Rgb2RawOutput};
