use rand::Rng;

use super::act::{relu, relu_backward, sigmoid, sigmoid_backward};
use super::conv::{Conv2d, ConvCache, Init};
use super::params::{Grads, ParamStore};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Squeeze-excitation gating: global average pool, `C -> C/r -> C` 1×1
/// bottleneck with a ReLU between, sigmoid, per-channel rescale.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub channels: usize,
    pub squeeze: Conv2d,
    pub excite: Conv2d,
}

#[derive(Clone, Debug)]
pub struct ChannelAttentionCache {
    input: Tensor,
    squeeze: ConvCache,
    hidden: Tensor,
    excite: ConvCache,
    /// Per-channel gate, `C×1×1`.
    pub gate: Tensor,
}

impl ChannelAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 || channels < reduction {
            return Err(Error::Config(format!(
                "channel attention: {channels} channels not divisible by reduction {reduction}"
            )));
        }
        let mid = channels / reduction;
        Ok(ChannelAttention {
            channels,
            squeeze: Conv2d::new(store, &format!("{name}.squeeze"), channels, mid, 1, Init::FanIn, rng),
            excite: Conv2d::new(store, &format!("{name}.excite"), mid, channels, 1, Init::FanIn, rng),
        })
    }

    pub fn param_count(channels: usize, reduction: usize) -> usize {
        let mid = channels / reduction;
        Conv2d::param_count(channels, mid, 1) + Conv2d::param_count(mid, channels, 1)
    }

    pub fn forward(&self, p: &ParamStore, u: &Tensor) -> Result<(Tensor, ChannelAttentionCache)> {
        if u.channels() != self.channels {
            return Err(dim_err(format!(
                "channel attention expects {} channels, got {}",
                self.channels,
                u.channels()
            )));
        }
        let c = u.channels();
        let z = Tensor::from_fn(c, 1, 1, |ch, _, _| u.channel_mean(ch));
        let (hidden, squeeze) = self.squeeze.forward(p, &z)?;
        let (logits, excite) = self.excite.forward(p, &relu(&hidden))?;
        let gate = sigmoid(&logits);
        let mut out = u.clone();
        for ch in 0..c {
            let s = gate.at(ch, 0, 0);
            out.plane_mut(ch).iter_mut().for_each(|v| *v *= s);
        }
        Ok((
            out,
            ChannelAttentionCache {
                input: u.clone(),
                squeeze,
                hidden,
                excite,
                gate,
            },
        ))
    }

    pub fn backward(&self, p: &ParamStore, cache: &ChannelAttentionCache, dy: &Tensor, g: &mut Grads) -> Tensor {
        let u = &cache.input;
        let c = u.channels();
        let n = u.plane_len() as f64;
        let mut du = dy.clone();
        let mut dgate = Tensor::zeros(c, 1, 1);
        for ch in 0..c {
            let s = cache.gate.at(ch, 0, 0);
            let dot: f64 = dy.plane(ch).iter().zip(u.plane(ch)).map(|(a, b)| a * b).sum();
            dgate.set(ch, 0, 0, dot);
            du.plane_mut(ch).iter_mut().for_each(|v| *v *= s);
        }
        let dlogits = sigmoid_backward(&cache.gate, &dgate);
        let dact = self.excite.backward(p, &cache.excite, &dlogits, g);
        let dhidden = relu_backward(&cache.hidden, &dact);
        let dz = self.squeeze.backward(p, &cache.squeeze, &dhidden, g);
        for ch in 0..c {
            let d = dz.at(ch, 0, 0) / n;
            du.plane_mut(ch).iter_mut().for_each(|v| *v += d);
        }
        du
    }
}

/// Spatial gating from channel-wise mean and max descriptors, a `2 -> 1`
/// convolution and a sigmoid, broadcast over channels.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

#[derive(Clone, Debug)]
pub struct SpatialAttentionCache {
    input: Tensor,
    argmax: Vec<u32>,
    conv: ConvCache,
    /// Per-site gate, `1×H×W`.
    pub gate: Tensor,
}

impl SpatialAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, kernel: usize, rng: &mut R) -> Self {
        SpatialAttention {
            conv: Conv2d::new(store, &format!("{name}.conv"), 2, 1, kernel, Init::FanIn, rng),
        }
    }

    pub fn param_count(kernel: usize) -> usize {
        Conv2d::param_count(2, 1, kernel)
    }

    pub fn forward(&self, p: &ParamStore, u: &Tensor) -> Result<(Tensor, SpatialAttentionCache)> {
        let (c, h, w) = u.shape();
        if c == 0 {
            return Err(dim_err("spatial attention on zero channels"));
        }
        let hw = h * w;
        let mut desc = Tensor::zeros(2, h, w);
        let mut argmax = vec![0u32; hw];
        for i in 0..hw {
            let mut sum = 0.0;
            let mut best = f64::NEG_INFINITY;
            for ch in 0..c {
                let v = u.data()[ch * hw + i];
                sum += v;
                if v > best {
                    best = v;
                    argmax[i] = ch as u32;
                }
            }
            desc.data_mut()[i] = sum / c as f64;
            desc.data_mut()[hw + i] = best;
        }
        let (logits, conv) = self.conv.forward(p, &desc)?;
        let gate = sigmoid(&logits);
        let mut out = u.clone();
        for ch in 0..c {
            for (v, m) in out.plane_mut(ch).iter_mut().zip(gate.data()) {
                *v *= m;
            }
        }
        Ok((
            out,
            SpatialAttentionCache {
                input: u.clone(),
                argmax,
                conv,
                gate,
            },
        ))
    }

    pub fn backward(&self, p: &ParamStore, cache: &SpatialAttentionCache, dy: &Tensor, g: &mut Grads) -> Tensor {
        let u = &cache.input;
        let (c, h, w) = u.shape();
        let hw = h * w;
        let mut dgate = Tensor::zeros(1, h, w);
        let mut du = dy.clone();
        for ch in 0..c {
            let (dp, up) = (dy.plane(ch), u.plane(ch));
            for i in 0..hw {
                dgate.data_mut()[i] += dp[i] * up[i];
            }
            for (v, m) in du.plane_mut(ch).iter_mut().zip(cache.gate.data()) {
                *v *= m;
            }
        }
        let dlogits = sigmoid_backward(&cache.gate, &dgate);
        let ddesc = self.conv.backward(p, &cache.conv, &dlogits, g);
        let inv_c = 1.0 / c as f64;
        let data = du.data_mut();
        for i in 0..hw {
            let dmean = ddesc.data()[i] * inv_c;
            for ch in 0..c {
                data[ch * hw + i] += dmean;
            }
            data[cache.argmax[i] as usize * hw + i] += ddesc.data()[hw + i];
        }
        du
    }
}
