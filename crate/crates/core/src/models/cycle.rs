use rand::{Rng, RngCore};

use super::config::CycleConfig;
use super::raw2rgb::{ColorGate, Raw2Rgb, Raw2RgbCache};
use super::rgb2raw::{Rgb2Raw, Rgb2RawCache};
use crate::bayer::RawMosaic;
use crate::error::Result;
use crate::nn::Grads;
use crate::noise::{apply_residue, inject_noise, NoiseParams, NoiseResidue};
use crate::objectives::JointGrads;
use crate::tensor::Tensor;

/// State of the noise-injection module between the two branches.
#[derive(Clone, Copy, Debug)]
pub enum NoiseSwitch<'a> {
    Off,
    /// Synthetic shot/read noise drawn from the supplied random source.
    Params(NoiseParams),
    /// A real per-pixel residue (noisy minus clean RAW).
    Residue(&'a NoiseResidue),
}

/// The full sRGB -> RAW -> sRGB model.
#[derive(Clone, Debug)]
pub struct CycleIsp {
    pub config: CycleConfig,
    pub rgb2raw: Rgb2Raw,
    pub raw2rgb: Raw2Rgb,
}

#[derive(Clone, Debug)]
pub struct CycleOutput {
    /// Clean RAW estimate from the sRGB->RAW branch.
    pub raw_clean: RawMosaic,
    /// RAW after the noise switch, fed to the RAW->sRGB branch.
    pub raw_fed: RawMosaic,
    pub rgb: Tensor,
}

#[derive(Clone, Debug)]
pub struct CycleCache {
    pub rgb2raw: Rgb2RawCache,
    pub raw2rgb: Raw2RgbCache,
}

impl CycleIsp {
    pub fn new<R: Rng + ?Sized>(config: CycleConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let rgb2raw = Rgb2Raw::new(config.rgb2raw, rng)?;
        let raw2rgb = Raw2Rgb::new(config.raw2rgb, config.color_corr, rng)?;
        Ok(CycleIsp {
            config,
            rgb2raw,
            raw2rgb,
        })
    }

    pub fn param_count(config: &CycleConfig) -> usize {
        Rgb2Raw::param_count(&config.rgb2raw) + Raw2Rgb::param_count(&config.raw2rgb, &config.color_corr)
    }

    pub fn forward(
        &self,
        rgb: &Tensor,
        switch: NoiseSwitch<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(CycleOutput, CycleCache)> {
        let (s2r, c1) = self.rgb2raw.forward(rgb)?;
        let raw_fed = match switch {
            NoiseSwitch::Off => s2r.raw.clone(),
            NoiseSwitch::Params(p) => inject_noise(&s2r.raw, p, rng),
            NoiseSwitch::Residue(r) => apply_residue(&s2r.raw, r)?,
        };
        // Color reference is the input image itself.
        let (rgb_hat, c2) = self.raw2rgb.forward_gated(&raw_fed, rgb, ColorGate::Learned)?;
        Ok((
            CycleOutput {
                raw_clean: s2r.raw,
                raw_fed,
                rgb: rgb_hat,
            },
            CycleCache {
                rgb2raw: c1,
                raw2rgb: c2,
            },
        ))
    }

    /// Backpropagates the joint-loss gradients into the two branches'
    /// buffers and returns the gradient on the sRGB input of the sRGB->RAW
    /// branch. The RAW term enters only below the RAW->sRGB branch; noise
    /// injection is additive, so the fed-RAW gradient reaches the clean
    /// estimate unchanged.
    pub fn backward(&self, cache: &CycleCache, jg: &JointGrads, g_rgb2raw: &mut Grads, g_raw2rgb: &mut Grads) -> Tensor {
        let d_fed = self.raw2rgb.backward(&cache.raw2rgb, &jg.d_rgb_hat, g_raw2rgb);
        self.rgb2raw.backward(&cache.rgb2raw, &d_fed.add(&jg.d_raw_hat), g_rgb2raw)
    }

    pub fn infer(&self, rgb: &Tensor, switch: NoiseSwitch<'_>, rng: &mut dyn RngCore) -> Result<CycleOutput> {
        self.forward(rgb, switch, rng).map(|(o, _)| o)
    }

    /// Renders `source` structure with the colors of a registered `target`:
    /// the source goes to RAW, the target is the color reference.
    pub fn color_match(&self, source: &Tensor, target: &Tensor) -> Result<Tensor> {
        source.ensure_same_shape(target, "color match source/target")?;
        let raw = self.rgb2raw.infer(source)?.raw;
        self.raw2rgb.infer(&raw, target)
    }
}
