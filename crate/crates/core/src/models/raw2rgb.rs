use rand::Rng;

use super::config::{BranchConfig, ColorConfig};
use crate::bayer::{self, RawMosaic};
use crate::error::{dim_err, Result};
use crate::nn::{
    gaussian_blur, pixel_shuffle_up, pixel_unshuffle, rrg_stack, sigmoid, sigmoid_backward, stack_backward,
    stack_forward, Conv2d, ConvCache, Grads, HasParams, Init, ParamStore, Rrg, RrgCache,
};
use crate::tensor::Tensor;

/// How the color gate `T_color` is produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ColorGate {
    /// From the color-correction branch.
    Learned,
    /// A constant gate, bypassing the branch (diagnostics and tests).
    Forced(f64),
}

/// RAW -> sRGB branch with its color-correction branch.
///
/// The packed mosaic is encoded by a head conv and `K - 1` residual
/// groups into `T_d'`. The color branch blurs the reference, averages it
/// onto the packed grid and produces a sigmoid gate `T_color`; features
/// become `T_d' + T_d' ⊙ T_color`, then one more residual group, a
/// 12-channel conv and a ×2 pixel shuffle give full-resolution sRGB.
#[derive(Clone, Debug)]
pub struct Raw2Rgb {
    pub config: BranchConfig,
    pub color_config: ColorConfig,
    pub params: ParamStore,
    head: Conv2d,
    encoder: Vec<Rrg>,
    decoder: Rrg,
    out: Conv2d,
    color_head: Conv2d,
    color_groups: Vec<Rrg>,
    color_out: Conv2d,
}

#[derive(Clone, Debug)]
pub struct ColorCache {
    head: ConvCache,
    groups: Vec<RrgCache>,
    out: ConvCache,
}

#[derive(Clone, Debug)]
pub struct Raw2RgbCache {
    head: ConvCache,
    encoder: Vec<RrgCache>,
    /// Encoded RAW features `T_d'`.
    pub features: Tensor,
    /// Color gate `T_color`.
    pub gate: Tensor,
    /// Gated features `T_atten`.
    pub attended: Tensor,
    color: Option<ColorCache>,
    decoder: RrgCache,
    out: ConvCache,
}

impl Raw2Rgb {
    pub fn new<R: Rng + ?Sized>(config: BranchConfig, color_config: ColorConfig, rng: &mut R) -> Result<Self> {
        config.validate("raw2rgb")?;
        color_config.branch().validate("color_corr")?;
        let mut params = ParamStore::new();
        let c = config.channels;
        let head = Conv2d::new(&mut params, "head", 4, c, 3, Init::FanIn, rng);
        let encoder = rrg_stack(
            &mut params,
            "encoder",
            config.block_spec(),
            config.n_rrg.saturating_sub(1),
            config.n_dab,
            rng,
        )?;
        let decoder = Rrg::new(&mut params, "decoder.rrg0", config.block_spec(), config.n_dab, rng)?;
        let out = Conv2d::new(&mut params, "out", c, 12, 3, Init::FanIn, rng);
        let cc = color_config.channels;
        let color_head = Conv2d::new(&mut params, "color.head", 3, cc, 3, Init::FanIn, rng);
        let color_groups = rrg_stack(
            &mut params,
            "color.body",
            color_config.branch().block_spec(),
            color_config.n_rrg,
            color_config.n_dab,
            rng,
        )?;
        let color_out = Conv2d::new(&mut params, "color.out", cc, c, 3, Init::FanIn, rng);
        Ok(Raw2Rgb {
            config,
            color_config,
            params,
            head,
            encoder,
            decoder,
            out,
            color_head,
            color_groups,
            color_out,
        })
    }

    pub fn param_count(config: &BranchConfig, color: &ColorConfig) -> usize {
        let c = config.channels;
        let cc = color.channels;
        Conv2d::param_count(4, c, 3)
            + config.n_rrg * Rrg::param_count(config.block_spec(), config.n_dab)
            + Conv2d::param_count(c, 12, 3)
            + Conv2d::param_count(3, cc, 3)
            + color.n_rrg * Rrg::param_count(color.branch().block_spec(), color.n_dab)
            + Conv2d::param_count(cc, c, 3)
    }

    pub fn color_out_conv(&self) -> &Conv2d {
        &self.color_out
    }

    /// Blurs the reference and averages it onto the packed grid.
    pub fn prepare_color_reference(&self, color_ref: &Tensor) -> Result<Tensor> {
        gaussian_blur(color_ref, self.color_config.blur_sigma)?.avg_pool2()
    }

    fn color_forward(&self, reference: &Tensor) -> Result<(Tensor, ColorCache)> {
        let p = &self.params;
        let (t, head) = self.color_head.forward(p, reference)?;
        let (t, groups) = stack_forward(&self.color_groups, p, t)?;
        let (logits, out) = self.color_out.forward(p, &t)?;
        Ok((sigmoid(&logits), ColorCache { head, groups, out }))
    }

    /// Color gate `T_color` for a full-resolution reference image.
    pub fn color_correction(&self, color_ref: &Tensor) -> Result<Tensor> {
        let prepared = self.prepare_color_reference(color_ref)?;
        self.color_forward(&prepared).map(|(g, _)| g)
    }

    fn align(raw: &RawMosaic, color_ref: &Tensor) -> Result<(RawMosaic, Tensor)> {
        let (c, h, w) = color_ref.shape();
        if c != 3 || h != raw.height() || w != raw.width() {
            return Err(dim_err(format!(
                "color reference {c}x{h}x{w} is not aligned with the {}x{} mosaic",
                raw.height(),
                raw.width()
            )));
        }
        let (unified, (top, left)) = bayer::unify_pattern_with_origin(raw)?;
        let reference = if (top, left) == (0, 0) {
            color_ref.clone()
        } else {
            color_ref.crop(top, left, unified.height(), unified.width())?
        };
        Ok((unified, reference))
    }

    pub fn forward(&self, raw: &RawMosaic, color_ref: &Tensor) -> Result<(Tensor, Raw2RgbCache)> {
        self.forward_gated(raw, color_ref, ColorGate::Learned)
    }

    /// Forward pass; non-RGGB mosaics are unified first and the reference
    /// is cropped to the same window, so the output covers that window.
    pub fn forward_gated(&self, raw: &RawMosaic, color_ref: &Tensor, gate: ColorGate) -> Result<(Tensor, Raw2RgbCache)> {
        let (raw, reference) = Self::align(raw, color_ref)?;
        let prepared = match gate {
            ColorGate::Learned => Some(self.prepare_color_reference(&reference)?),
            ColorGate::Forced(_) => None,
        };
        self.forward_prepared(raw.data(), prepared.as_ref(), gate)
    }

    /// Forward from an RGGB mosaic tensor and an already blurred and
    /// downsampled reference.
    pub(crate) fn forward_prepared(
        &self,
        rggb: &Tensor,
        prepared_ref: Option<&Tensor>,
        gate: ColorGate,
    ) -> Result<(Tensor, Raw2RgbCache)> {
        let p = &self.params;
        let packed = bayer::pack_tensor(rggb);
        let (t, head) = self.head.forward(p, &packed)?;
        let (features, encoder) = stack_forward(&self.encoder, p, t)?;
        let (gate_t, color) = match (gate, prepared_ref) {
            (ColorGate::Learned, Some(r)) => {
                if (r.height(), r.width()) != (features.height(), features.width()) {
                    return Err(dim_err("prepared color reference does not match the packed grid"));
                }
                let (g, c) = self.color_forward(r)?;
                (g, Some(c))
            }
            (ColorGate::Learned, None) => return Err(dim_err("learned color gate needs a reference")),
            (ColorGate::Forced(v), _) => (
                Tensor::filled(features.channels(), features.height(), features.width(), v),
                None,
            ),
        };
        let attended = features.zip_map(&gate_t, |f, g| f + f * g);
        let (dec, decoder) = self.decoder.forward(p, &attended)?;
        let (y, out) = self.out.forward(p, &dec)?;
        let rgb = pixel_shuffle_up(&y, 2)?;
        Ok((
            rgb,
            Raw2RgbCache {
                head,
                encoder,
                features,
                gate: gate_t,
                attended,
                color,
                decoder,
                out,
            },
        ))
    }

    pub fn infer(&self, raw: &RawMosaic, color_ref: &Tensor) -> Result<Tensor> {
        self.forward(raw, color_ref).map(|(o, _)| o)
    }

    /// Backpropagates an sRGB gradient; returns the gradient on the input
    /// RGGB mosaic.
    pub fn backward(&self, cache: &Raw2RgbCache, d_rgb: &Tensor, g: &mut Grads) -> Tensor {
        let p = &self.params;
        let dy = pixel_unshuffle(d_rgb, 2).expect("even output");
        let d_dec = self.out.backward(p, &cache.out, &dy, g);
        let d_att = self.decoder.backward(p, &cache.decoder, &d_dec, g);
        let d_features = d_att.zip_map(&cache.gate, |d, gt| d * (1.0 + gt));
        if let Some(cc) = &cache.color {
            let d_gate = d_att.mul(&cache.features);
            let d_logits = sigmoid_backward(&cache.gate, &d_gate);
            let d = self.color_out.backward(p, &cc.out, &d_logits, g);
            let d = stack_backward(&self.color_groups, p, &cc.groups, d, g);
            self.color_head.backward(p, &cc.head, &d, g);
        }
        let d_t = stack_backward(&self.encoder, p, &cache.encoder, d_features, g);
        let d_packed = self.head.backward(p, &cache.head, &d_t, g);
        bayer::unpack_tensor(&d_packed)
    }
}

impl HasParams for Raw2Rgb {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}
