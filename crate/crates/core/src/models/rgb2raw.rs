use rand::Rng;

use super::config::BranchConfig;
use crate::bayer::{self, BayerPattern, RawMosaic};
use crate::error::{dim_err, Result};
use crate::nn::{rrg_stack, stack_backward, stack_forward, Conv2d, ConvCache, Grads, HasParams, Init, ParamStore, Rrg, RrgCache};
use crate::tensor::Tensor;

/// sRGB -> RAW branch: 3×3 head conv, residual groups, a 3-channel
/// "demosaicked" head and RGGB Bayer sampling.
#[derive(Clone, Debug)]
pub struct Rgb2Raw {
    pub config: BranchConfig,
    pub params: ParamStore,
    head: Conv2d,
    groups: Vec<Rrg>,
    out: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Rgb2RawOutput {
    /// Linear-domain 3-channel estimate before sampling.
    pub dem: Tensor,
    pub raw: RawMosaic,
}

#[derive(Clone, Debug)]
pub struct Rgb2RawCache {
    head: ConvCache,
    groups: Vec<RrgCache>,
    out: ConvCache,
}

impl Rgb2Raw {
    pub fn new<R: Rng + ?Sized>(config: BranchConfig, rng: &mut R) -> Result<Self> {
        config.validate("rgb2raw")?;
        let mut params = ParamStore::new();
        let c = config.channels;
        let head = Conv2d::new(&mut params, "head", 3, c, 3, Init::FanIn, rng);
        let groups = rrg_stack(&mut params, "body", config.block_spec(), config.n_rrg, config.n_dab, rng)?;
        let out = Conv2d::new(&mut params, "out", c, 3, 3, Init::FanIn, rng);
        Ok(Rgb2Raw {
            config,
            params,
            head,
            groups,
            out,
        })
    }

    pub fn head_conv(&self) -> &Conv2d {
        &self.head
    }

    pub fn out_conv(&self) -> &Conv2d {
        &self.out
    }

    pub fn param_count(config: &BranchConfig) -> usize {
        let c = config.channels;
        Conv2d::param_count(3, c, 3)
            + config.n_rrg * Rrg::param_count(config.block_spec(), config.n_dab)
            + Conv2d::param_count(c, 3, 3)
    }

    pub fn forward(&self, rgb: &Tensor) -> Result<(Rgb2RawOutput, Rgb2RawCache)> {
        let (c, h, w) = rgb.shape();
        if c != 3 || h % 2 != 0 || w % 2 != 0 {
            return Err(dim_err(format!("rgb2raw needs an even-sized 3-channel image, got {c}x{h}x{w}")));
        }
        let p = &self.params;
        let (t0, head) = self.head.forward(p, rgb)?;
        let (td, groups) = stack_forward(&self.groups, p, t0)?;
        let (dem, out) = self.out.forward(p, &td)?;
        let raw = bayer::mosaic(&dem, BayerPattern::Rggb)?;
        Ok((Rgb2RawOutput { dem, raw }, Rgb2RawCache { head, groups, out }))
    }

    pub fn infer(&self, rgb: &Tensor) -> Result<Rgb2RawOutput> {
        self.forward(rgb).map(|(o, _)| o)
    }

    /// Backpropagates a gradient on the RGGB mosaic output; returns the
    /// gradient on the input image.
    pub fn backward(&self, cache: &Rgb2RawCache, d_raw: &Tensor, g: &mut Grads) -> Tensor {
        let p = &self.params;
        let d_dem = bayer::mosaic_backward(d_raw, BayerPattern::Rggb);
        let d_td = self.out.backward(p, &cache.out, &d_dem, g);
        let d_t0 = stack_backward(&self.groups, p, &cache.groups, d_td, g);
        self.head.backward(p, &cache.head, &d_t0, g)
    }
}

impl HasParams for Rgb2Raw {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}
