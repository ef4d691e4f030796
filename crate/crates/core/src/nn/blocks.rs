use rand::Rng;
use serde::{Deserialize, Serialize};

use super::act::{relu, relu_backward};
use super::attention::{ChannelAttention, ChannelAttentionCache, SpatialAttention, SpatialAttentionCache};
use super::conv::{Conv2d, ConvCache, Init};
use super::params::{Grads, ParamStore};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Shape of every dual attention block in a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub channels: usize,
    /// Channel-attention bottleneck ratio.
    pub reduction: usize,
    /// Kernel of the spatial-attention convolution.
    pub sa_kernel: usize,
}

impl BlockSpec {
    pub fn new(channels: usize) -> Self {
        BlockSpec {
            channels,
            reduction: 8,
            sa_kernel: 3,
        }
    }
}

/// Dual attention block: two 3×3 convs produce `U`, channel and spatial
/// attention run on `U` in parallel, a 1×1 conv fuses the concatenation
/// back to `C` channels and the result is added to the input.
#[derive(Clone, Debug)]
pub struct Dab {
    pub spec: BlockSpec,
    pub conv_a: Conv2d,
    pub conv_b: Conv2d,
    pub ca: ChannelAttention,
    pub sa: SpatialAttention,
    pub fuse: Conv2d,
}

#[derive(Clone, Debug)]
pub struct DabCache {
    conv_a: ConvCache,
    pre_act: Tensor,
    conv_b: ConvCache,
    ca: ChannelAttentionCache,
    sa: SpatialAttentionCache,
    fuse: ConvCache,
}

impl Dab {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: BlockSpec, rng: &mut R) -> Result<Self> {
        let c = spec.channels;
        Ok(Dab {
            spec,
            conv_a: Conv2d::new(store, &format!("{name}.conv_a"), c, c, 3, Init::FanIn, rng),
            conv_b: Conv2d::new(store, &format!("{name}.conv_b"), c, c, 3, Init::FanIn, rng),
            ca: ChannelAttention::new(store, &format!("{name}.ca"), c, spec.reduction, rng)?,
            sa: SpatialAttention::new(store, &format!("{name}.sa"), spec.sa_kernel, rng),
            fuse: Conv2d::new(store, &format!("{name}.fuse"), 2 * c, c, 1, Init::Zero, rng),
        })
    }

    pub fn param_count(spec: BlockSpec) -> usize {
        let c = spec.channels;
        2 * Conv2d::param_count(c, c, 3)
            + ChannelAttention::param_count(c, spec.reduction)
            + SpatialAttention::param_count(spec.sa_kernel)
            + Conv2d::param_count(2 * c, c, 1)
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<(Tensor, DabCache)> {
        if x.channels() != self.spec.channels {
            return Err(dim_err(format!(
                "DAB expects {} channels, got {}",
                self.spec.channels,
                x.channels()
            )));
        }
        let (pre_act, conv_a) = self.conv_a.forward(p, x)?;
        let (u, conv_b) = self.conv_b.forward(p, &relu(&pre_act))?;
        let (ca_out, ca) = self.ca.forward(p, &u)?;
        let (sa_out, sa) = self.sa.forward(p, &u)?;
        let cat = Tensor::concat_channels(&[&ca_out, &sa_out])?;
        let (fused, fuse) = self.fuse.forward(p, &cat)?;
        Ok((
            x.add(&fused),
            DabCache {
                conv_a,
                pre_act,
                conv_b,
                ca,
                sa,
                fuse,
            },
        ))
    }

    pub fn backward(&self, p: &ParamStore, cache: &DabCache, dy: &Tensor, g: &mut Grads) -> Tensor {
        let c = self.spec.channels;
        let dcat = self.fuse.backward(p, &cache.fuse, dy, g);
        let mut du = self.ca.backward(p, &cache.ca, &dcat.slice_channels(0, c), g);
        du.add_assign(&self.sa.backward(p, &cache.sa, &dcat.slice_channels(c, c), g));
        let dact = self.conv_b.backward(p, &cache.conv_b, &du, g);
        let dpre = relu_backward(&cache.pre_act, &dact);
        let mut dx = self.conv_a.backward(p, &cache.conv_a, &dpre, g);
        dx.add_assign(dy);
        dx
    }
}

/// Recursive residual group: `P` DABs, a 3×3 conv, and a skip around all.
#[derive(Clone, Debug)]
pub struct Rrg {
    pub dabs: Vec<Dab>,
    pub tail: Conv2d,
}

#[derive(Clone, Debug)]
pub struct RrgCache {
    dabs: Vec<DabCache>,
    tail: ConvCache,
}

impl Rrg {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: BlockSpec,
        n_dab: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_dab < 1 {
            return Err(Error::Config(format!("{name}: a residual group needs at least one DAB")));
        }
        let dabs = (0..n_dab)
            .map(|i| Dab::new(store, &format!("{name}.dab{i}"), spec, rng))
            .collect::<Result<Vec<_>>>()?;
        let c = spec.channels;
        let tail = Conv2d::new(store, &format!("{name}.tail"), c, c, 3, Init::Zero, rng);
        Ok(Rrg { dabs, tail })
    }

    pub fn param_count(spec: BlockSpec, n_dab: usize) -> usize {
        n_dab * Dab::param_count(spec) + Conv2d::param_count(spec.channels, spec.channels, 3)
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<(Tensor, RrgCache)> {
        let mut caches = Vec::with_capacity(self.dabs.len());
        let mut h = x.clone();
        for dab in &self.dabs {
            let (next, cache) = dab.forward(p, &h)?;
            caches.push(cache);
            h = next;
        }
        let (t, tail) = self.tail.forward(p, &h)?;
        Ok((x.add(&t), RrgCache { dabs: caches, tail }))
    }

    pub fn backward(&self, p: &ParamStore, cache: &RrgCache, dy: &Tensor, g: &mut Grads) -> Tensor {
        let mut d = self.tail.backward(p, &cache.tail, dy, g);
        for (dab, c) in self.dabs.iter().zip(&cache.dabs).rev() {
            d = dab.backward(p, c, &d, g);
        }
        d.add_assign(dy);
        d
    }
}

/// A chain of residual groups.
pub(crate) fn rrg_stack<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    spec: BlockSpec,
    n_rrg: usize,
    n_dab: usize,
    rng: &mut R,
) -> Result<Vec<Rrg>> {
    (0..n_rrg)
        .map(|i| Rrg::new(store, &format!("{name}.rrg{i}"), spec, n_dab, rng))
        .collect()
}

pub(crate) fn stack_forward(groups: &[Rrg], p: &ParamStore, x: Tensor) -> Result<(Tensor, Vec<RrgCache>)> {
    let mut caches = Vec::with_capacity(groups.len());
    let mut h = x;
    for g in groups {
        let (next, c) = g.forward(p, &h)?;
        caches.push(c);
        h = next;
    }
    Ok((h, caches))
}

pub(crate) fn stack_backward(groups: &[Rrg], p: &ParamStore, caches: &[RrgCache], dy: Tensor, g: &mut Grads) -> Tensor {
    let mut d = dy;
    for (grp, c) in groups.iter().zip(caches).rev() {
        d = grp.backward(p, c, &d, g);
    }
    d
}
