//! Dense channel-major (C×H×W) arrays of `f64`.
//!
//! Every image, mosaic, packed RAW frame and feature map in the crate is a
//! [`Tensor`]. A RAW mosaic is a 1-channel tensor, a packed RAW frame is a
//! 4-channel tensor at half resolution, an sRGB image has 3 channels.

use crate::error::{dim_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::filled(c, h, w, 0.0)
    }

    pub fn filled(c: usize, h: usize, w: usize, v: f64) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![v; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(dim_err(format!(
                "buffer of {} values cannot hold a {c}x{h}x{w} tensor",
                data.len()
            )));
        }
        Ok(Tensor { c, h, w, data })
    }

    /// Builds a tensor by evaluating `f(channel, row, col)` at every site.
    pub fn from_fn(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ch, y, x));
                }
            }
        }
        Tensor { c, h, w, data }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.c, other.h, other.w)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    /// `(channels, height, width)`
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.c && y < self.h && x < self.w);
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    #[inline]
    pub fn add_at(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] += v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(dim_err(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|d| *d = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, s: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let p = self.plane(c);
        p.iter().sum::<f64>() / p.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Stacks the channels of `parts` in order.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err("cannot concatenate zero tensors"))?;
        let (h, w) = (first.h, first.w);
        let mut data = Vec::new();
        let mut c = 0;
        for p in parts {
            if p.h != h || p.w != w {
                return Err(dim_err(format!(
                    "channel concat needs equal spatial size, got {}x{} and {}x{}",
                    h, w, p.h, p.w
                )));
            }
            c += p.c;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { c, h, w, data })
    }

    /// Channels `[start, start + count)` as a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Tensor {
        assert!(start + count <= self.c, "channel slice out of range");
        let n = self.plane_len();
        Tensor {
            c: count,
            h: self.h,
            w: self.w,
            data: self.data[start * n..(start + count) * n].to_vec(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
        if top + h > self.h || left + w > self.w {
            return Err(dim_err(format!(
                "crop {h}x{w} at ({top},{left}) exceeds {}x{}",
                self.h, self.w
            )));
        }
        Ok(Tensor::from_fn(self.c, h, w, |c, y, x| {
            self.at(c, top + y, left + x)
        }))
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Tensor {
        let w = self.w;
        Tensor::from_fn(self.c, self.h, self.w, |c, y, x| self.at(c, y, w - 1 - x))
    }

    /// Mirror top-bottom.
    pub fn flip_vertical(&self) -> Tensor {
        let h = self.h;
        Tensor::from_fn(self.c, self.h, self.w, |c, y, x| self.at(c, h - 1 - y, x))
    }

    /// Averages non-overlapping 2×2 blocks; both dimensions must be even.
    pub fn avg_pool2(&self) -> Result<Tensor> {
        if self.h % 2 != 0 || self.w % 2 != 0 {
            return Err(dim_err(format!(
                "2x2 block averaging needs even size, got {}x{}",
                self.h, self.w
            )));
        }
        Ok(Tensor::from_fn(self.c, self.h / 2, self.w / 2, |c, y, x| {
            0.25 * (self.at(c, 2 * y, 2 * x)
                + self.at(c, 2 * y, 2 * x + 1)
                + self.at(c, 2 * y + 1, 2 * x)
                + self.at(c, 2 * y + 1, 2 * x + 1))
        }))
    }
}
