use rand::Rng;

use super::config::{DenoiseMode, DenoiserConfig};
use crate::error::{dim_err, Error, Result};
use crate::nn::{rrg_stack, stack_backward, stack_forward, Conv2d, ConvCache, Grads, HasParams, Init, ParamStore, Rrg, RrgCache};
use crate::tensor::Tensor;

/// Residual-group denoiser shared by the RAW and sRGB settings: head conv,
/// residual groups, tail conv, plus a global input-to-output skip.
///
/// RAW mode takes a 4-channel packed frame and a 4-channel noise-level map
/// and predicts the 4-channel clean frame; sRGB mode maps 3 channels to 3.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamStore,
    head: Conv2d,
    groups: Vec<Rrg>,
    tail: Conv2d,
}

#[derive(Clone, Debug)]
pub struct DenoiserCache {
    head: ConvCache,
    groups: Vec<RrgCache>,
    tail: ConvCache,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let c = config.channels;
        let head = Conv2d::new(&mut params, "head", config.mode.input_channels(), c, 3, Init::FanIn, rng);
        let groups = rrg_stack(&mut params, "body", config.branch().block_spec(), config.n_rrg, config.n_dab, rng)?;
        let tail = Conv2d::new(&mut params, "tail", c, config.mode.image_channels(), 3, Init::Zero, rng);
        Ok(Denoiser {
            config,
            params,
            head,
            groups,
            tail,
        })
    }

    pub fn head_conv(&self) -> &Conv2d {
        &self.head
    }

    pub fn tail_conv(&self) -> &Conv2d {
        &self.tail
    }

    pub fn param_count(config: &DenoiserConfig) -> usize {
        let c = config.channels;
        Conv2d::param_count(config.mode.input_channels(), c, 3)
            + config.n_rrg * Rrg::param_count(config.branch().block_spec(), config.n_dab)
            + Conv2d::param_count(c, config.mode.image_channels(), 3)
    }

    fn assemble(&self, input: &Tensor, noise_map: Option<&Tensor>) -> Result<Tensor> {
        let want = self.config.mode.image_channels();
        if input.channels() != want {
            return Err(dim_err(format!(
                "{} denoiser expects {want} channels, got {}",
                self.config.mode,
                input.channels()
            )));
        }
        match (self.config.mode, noise_map) {
            (DenoiseMode::Raw, Some(m)) => {
                input.ensure_same_shape(m, "noise level map")?;
                Tensor::concat_channels(&[input, m])
            }
            (DenoiseMode::Raw, None) => Err(Error::Argument("RAW denoising requires a noise level map".into())),
            (DenoiseMode::Srgb, Some(_)) => Err(Error::Argument("sRGB denoising does not take a noise level map".into())),
            (DenoiseMode::Srgb, None) => Ok(input.clone()),
        }
    }

    pub fn forward(&self, input: &Tensor, noise_map: Option<&Tensor>) -> Result<(Tensor, DenoiserCache)> {
        let x = self.assemble(input, noise_map)?;
        let p = &self.params;
        let (t, head) = self.head.forward(p, &x)?;
        let (t, groups) = stack_forward(&self.groups, p, t)?;
        let (residual, tail) = self.tail.forward(p, &t)?;
        Ok((input.add(&residual), DenoiserCache { head, groups, tail }))
    }

    pub fn infer(&self, input: &Tensor, noise_map: Option<&Tensor>) -> Result<Tensor> {
        self.forward(input, noise_map).map(|(o, _)| o)
    }

    /// Accumulates parameter gradients for an output gradient.
    pub fn backward(&self, cache: &DenoiserCache, d_out: &Tensor, g: &mut Grads) {
        let p = &self.params;
        let d = self.tail.backward(p, &cache.tail, d_out, g);
        let d = stack_backward(&self.groups, p, &cache.groups, d, g);
        self.head.backward(p, &cache.head, &d, g);
    }
}

impl HasParams for Denoiser {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}
