use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::BlockSpec;

fn default_reduction() -> usize {
    8
}

fn default_sa_kernel() -> usize {
    3
}

fn default_blur_sigma() -> f64 {
    12.0
}

/// Depth and width of one branch built from residual groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub n_rrg: usize,
    pub n_dab: usize,
    pub channels: usize,
    #[serde(default = "default_reduction")]
    pub reduction: usize,
    #[serde(default = "default_sa_kernel")]
    pub sa_kernel: usize,
}

impl BranchConfig {
    pub fn new(n_rrg: usize, n_dab: usize, channels: usize) -> Self {
        BranchConfig {
            n_rrg,
            n_dab,
            channels,
            reduction: default_reduction(),
            sa_kernel: default_sa_kernel(),
        }
    }

    pub fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            channels: self.channels,
            reduction: self.reduction,
            sa_kernel: self.sa_kernel,
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.n_rrg < 1 || self.n_dab < 1 {
            return Err(Error::Config(format!("{what}: n_rrg and n_dab must be at least 1")));
        }
        if self.channels == 0 || self.reduction == 0 || self.channels % self.reduction != 0 {
            return Err(Error::Config(format!(
                "{what}: channels {} must be a positive multiple of reduction {}",
                self.channels, self.reduction
            )));
        }
        if self.sa_kernel % 2 == 0 {
            return Err(Error::Config(format!("{what}: sa_kernel must be odd")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorConfig {
    pub n_rrg: usize,
    pub n_dab: usize,
    pub channels: usize,
    #[serde(default = "default_blur_sigma")]
    pub blur_sigma: f64,
    #[serde(default = "default_reduction")]
    pub reduction: usize,
    #[serde(default = "default_sa_kernel")]
    pub sa_kernel: usize,
}

impl ColorConfig {
    pub fn branch(&self) -> BranchConfig {
        BranchConfig {
            n_rrg: self.n_rrg,
            n_dab: self.n_dab,
            channels: self.channels,
            reduction: self.reduction,
            sa_kernel: self.sa_kernel,
        }
    }
}

/// Architecture of the sRGB->RAW, RAW->sRGB and color-correction branches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    pub rgb2raw: BranchConfig,
    pub raw2rgb: BranchConfig,
    pub color_corr: ColorConfig,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl CycleConfig {
    /// Full depths at width 64.
    pub fn full() -> Self {
        Self::with_width(64)
    }

    pub fn with_width(channels: usize) -> Self {
        CycleConfig {
            rgb2raw: BranchConfig::new(3, 5, channels),
            raw2rgb: BranchConfig::new(3, 5, channels),
            color_corr: ColorConfig {
                n_rrg: 2,
                n_dab: 3,
                channels,
                blur_sigma: default_blur_sigma(),
                reduction: default_reduction(),
                sa_kernel: default_sa_kernel(),
            },
        }
    }

    /// Width-16, shallow preset for CPU-scale runs.
    pub fn toy() -> Self {
        CycleConfig {
            rgb2raw: BranchConfig::new(2, 2, 16),
            raw2rgb: BranchConfig::new(2, 2, 16),
            color_corr: ColorConfig {
                n_rrg: 1,
                n_dab: 1,
                channels: 16,
                blur_sigma: default_blur_sigma(),
                reduction: default_reduction(),
                sa_kernel: default_sa_kernel(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rgb2raw.validate("rgb2raw")?;
        self.raw2rgb.validate("raw2rgb")?;
        self.color_corr.branch().validate("color_corr")?;
        if self.raw2rgb.n_rrg < 1 {
            return Err(Error::Config("raw2rgb needs at least one residual group".into()));
        }
        if self.color_corr.channels != self.raw2rgb.channels {
            return Err(Error::Config(format!(
                "color_corr.channels {} must equal raw2rgb.channels {} for the color gate",
                self.color_corr.channels, self.raw2rgb.channels
            )));
        }
        if !(self.color_corr.blur_sigma > 0.0) {
            return Err(Error::Config("color_corr.blur_sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiseMode {
    Raw,
    Srgb,
}

impl DenoiseMode {
    /// Channels of the image being denoised.
    pub fn image_channels(self) -> usize {
        match self {
            DenoiseMode::Raw => 4,
            DenoiseMode::Srgb => 3,
        }
    }

    /// Network input channels: the RAW mode appends a 4-channel noise map.
    pub fn input_channels(self) -> usize {
        match self {
            DenoiseMode::Raw => 8,
            DenoiseMode::Srgb => 3,
        }
    }
}

impl std::str::FromStr for DenoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(DenoiseMode::Raw),
            "srgb" => Ok(DenoiseMode::Srgb),
            other => Err(Error::Argument(format!("unknown mode {other:?}, expected raw or srgb"))),
        }
    }
}

impl std::fmt::Display for DenoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DenoiseMode::Raw => "raw",
            DenoiseMode::Srgb => "srgb",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub n_rrg: usize,
    pub n_dab: usize,
    pub channels: usize,
    pub mode: DenoiseMode,
    #[serde(default = "default_reduction")]
    pub reduction: usize,
    #[serde(default = "default_sa_kernel")]
    pub sa_kernel: usize,
}

impl DenoiserConfig {
    /// Full depth (4 groups × 8 blocks) at width 64.
    pub fn full(mode: DenoiseMode) -> Self {
        DenoiserConfig {
            n_rrg: 4,
            n_dab: 8,
            channels: 64,
            mode,
            reduction: default_reduction(),
            sa_kernel: default_sa_kernel(),
        }
    }

    pub fn toy(mode: DenoiseMode) -> Self {
        DenoiserConfig {
            n_rrg: 2,
            n_dab: 2,
            channels: 16,
            ..Self::full(mode)
        }
    }

    pub fn branch(&self) -> BranchConfig {
        BranchConfig {
            n_rrg: self.n_rrg,
            n_dab: self.n_dab,
            channels: self.channels,
            reduction: self.reduction,
            sa_kernel: self.sa_kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.branch().validate("denoiser")
    }
}
