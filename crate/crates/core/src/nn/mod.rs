//! Differentiable building blocks.
//!
//! Layers do not own their weights. Each layer holds [`ParamId`]s into a
//! [`ParamStore`]; `forward` returns the output plus a cache, and
//! `backward` consumes the cache, accumulates parameter gradients into a
//! [`Grads`] buffer shaped like the store and returns the input gradient.

mod act;
mod attention;
mod blocks;
mod blur;
mod conv;
mod params;
mod shuffle;

pub use act::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use attention::{ChannelAttention, ChannelAttentionCache, SpatialAttention, SpatialAttentionCache};
pub use blocks::{BlockSpec, Dab, DabCache, Rrg, RrgCache};
pub(crate) use blocks::{rrg_stack, stack_backward, stack_forward};
pub use blur::{gaussian_blur, gaussian_kernel};
pub use conv::{Conv2d, ConvCache, Init};
pub use params::{Grads, HasParams, ParamId, ParamStore};
pub use shuffle::{pixel_shuffle_up, pixel_unshuffle};
