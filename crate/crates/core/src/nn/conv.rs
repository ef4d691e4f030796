use rand::Rng;

use super::params::{Grads, ParamId, ParamStore};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Weight initialization for a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform weights with variance `1 / fan_in`, zero bias.
    FanIn,
    /// All-zero weights and bias: a residual branch that starts closed.
    Zero,
}

/// Mirror index without repeating the edge sample (`-1 -> 1`), folded
/// as often as needed for offsets larger than the extent.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

fn column_maps(k: usize, w: usize) -> Vec<Vec<usize>> {
    let pad = (k / 2) as isize;
    (0..k)
        .map(|kx| (0..w).map(|x| reflect(x as isize + kx as isize - pad, w)).collect())
        .collect()
}

/// Output columns whose tap `kx` lands inside the row without reflection.
fn interior(kx: usize, pad: usize, w: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx);
    let hi = (w + pad).saturating_sub(kx).min(w);
    (lo, hi)
}

/// Same-size 2-D convolution with reflective padding and bias.
///
/// The weight is stored as an `out × (in·k·k)` matrix (a 1-channel tensor
/// of height `out`), columns ordered by input channel, then kernel row,
/// then kernel column.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    input: Tensor,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        let fan_in = in_ch * kernel * kernel;
        let mut w = Tensor::zeros(1, out_ch, fan_in);
        if init == Init::FanIn {
            let bound = (3.0 / fan_in as f64).sqrt();
            w.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-bound..bound));
        }
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, 1, out_ch));
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            weight,
            bias,
        }
    }

    /// Learnable scalars in one layer of this shape.
    pub fn param_count(in_ch: usize, out_ch: usize, kernel: usize) -> usize {
        kernel * kernel * in_ch * out_ch + out_ch
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.channels() != self.in_ch {
            return Err(dim_err(format!(
                "conv expects {} input channels, got {}",
                self.in_ch,
                x.channels()
            )));
        }
        Ok(())
    }

    fn im2col(&self, x: &Tensor) -> Vec<f64> {
        let (c, h, w) = x.shape();
        let k = self.kernel;
        let pad = k / 2;
        let hw = h * w;
        let mut cols = vec![0.0; c * k * k * hw];
        let xmap = column_maps(k, w);
        for ci in 0..c {
            let plane = x.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let xm = &xmap[kx];
                    // Columns [lo, hi) read a contiguous source run.
                    let (lo, hi) = interior(kx, pad, w);
                    for y in 0..h {
                        let sy = reflect(y as isize + ky as isize - pad as isize, h);
                        let src = &plane[sy * w..(sy + 1) * w];
                        let d = &mut dst[y * w..(y + 1) * w];
                        if lo < hi {
                            d[lo..hi].copy_from_slice(&src[lo + kx - pad..hi + kx - pad]);
                        }
                        for xx in (0..lo).chain(hi.max(lo)..w) {
                            d[xx] = src[xm[xx]];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], c: usize, h: usize, w: usize) -> Tensor {
        let k = self.kernel;
        let pad = k / 2;
        let hw = h * w;
        let mut dx = Tensor::zeros(c, h, w);
        let xmap = column_maps(k, w);
        for ci in 0..c {
            let plane = dx.plane_mut(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let xm = &xmap[kx];
                    let (lo, hi) = interior(kx, pad, w);
                    for y in 0..h {
                        let sy = reflect(y as isize + ky as isize - pad as isize, h);
                        let s = &src[y * w..(y + 1) * w];
                        let d = &mut plane[sy * w..(sy + 1) * w];
                        if lo < hi {
                            for (dv, sv) in d[lo + kx - pad..hi + kx - pad].iter_mut().zip(&s[lo..hi]) {
                                *dv += sv;
                            }
                        }
                        for xx in (0..lo).chain(hi.max(lo)..w) {
                            d[xm[xx]] += s[xx];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let y = self.infer(p, x)?;
        Ok((y, ConvCache { input: x.clone() }))
    }

    pub fn infer(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let (_, h, w) = x.shape();
        let hw = h * w;
        let kk = self.in_ch * self.kernel * self.kernel;
        let owned;
        let cols: &[f64] = if self.kernel == 1 {
            x.data()
        } else {
            owned = self.im2col(x);
            &owned
        };
        let bias = p.get(self.bias).data();
        let mut out = Tensor::zeros(self.out_ch, h, w);
        for (o, &b) in bias.iter().enumerate() {
            out.plane_mut(o).fill(b);
        }
        let wt = p.get(self.weight).data();
        unsafe {
            matrixmultiply::dgemm(
                self.out_ch,
                kk,
                hw,
                1.0,
                wt.as_ptr(),
                kk as isize,
                1,
                cols.as_ptr(),
                hw as isize,
                1,
                1.0,
                out.data_mut().as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        Ok(out)
    }

    pub fn backward(&self, p: &ParamStore, cache: &ConvCache, dy: &Tensor, g: &mut Grads) -> Tensor {
        let x = &cache.input;
        let (c, h, w) = x.shape();
        let hw = h * w;
        let kk = self.in_ch * self.kernel * self.kernel;
        let owned;
        let cols: &[f64] = if self.kernel == 1 {
            x.data()
        } else {
            owned = self.im2col(x);
            &owned
        };
        {
            let gb = g.get_mut(self.bias).data_mut();
            for (o, gv) in gb.iter_mut().enumerate() {
                *gv += dy.plane(o).iter().sum::<f64>();
            }
        }
        // dW += dY · colsᵀ
        unsafe {
            let gw = g.get_mut(self.weight).data_mut();
            matrixmultiply::dgemm(
                self.out_ch,
                hw,
                kk,
                1.0,
                dy.data().as_ptr(),
                hw as isize,
                1,
                cols.as_ptr(),
                1,
                hw as isize,
                1.0,
                gw.as_mut_ptr(),
                kk as isize,
                1,
            );
        }
        // dcols = Wᵀ · dY
        let wt = p.get(self.weight).data();
        let mut dcols = vec![0.0; kk * hw];
        unsafe {
            matrixmultiply::dgemm(
                kk,
                self.out_ch,
                hw,
                1.0,
                wt.as_ptr(),
                1,
                kk as isize,
                dy.data().as_ptr(),
                hw as isize,
                1,
                0.0,
                dcols.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        if self.kernel == 1 {
            Tensor::from_vec(c, h, w, dcols).expect("shape")
        } else {
            self.col2im(&dcols, c, h, w)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution.
    fn direct(conv: &Conv2d, p: &ParamStore, x: &Tensor) -> Tensor {
        let (_, h, w) = x.shape();
        let k = conv.kernel;
        let pad = (k / 2) as isize;
        let wt = p.get(conv.weight);
        let b = p.get(conv.bias);
        Tensor::from_fn(conv.out_ch, h, w, |o, y, xx| {
            let mut acc = b.at(0, 0, o);
            for ci in 0..conv.in_ch {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = reflect(y as isize + ky as isize - pad, h);
                        let sx = reflect(xx as isize + kx as isize - pad, w);
                        acc += wt.at(0, o, (ci * k + ky) * k + kx) * x.at(ci, sy, sx);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn reflect_folds() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-6, 5), 2);
        assert_eq!(reflect(3, 1), 0);
        assert_eq!(reflect(-1, 2), 1);
        assert_eq!(reflect(2, 2), 0);
    }

    #[test]
    fn gemm_path_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 3, 5, 3, Init::FanIn, &mut rng);
        store
            .get_mut(conv.bias)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let x = Tensor::from_fn(3, 7, 6, |_, _, _| rng.gen_range(-1.0..1.0));
        let fast = conv.infer(&store, &x).unwrap();
        assert!(fast.max_abs_diff(&direct(&conv, &store, &x)) < 1e-12);
    }

    #[test]
    fn param_count_closed_form() {
        assert_eq!(Conv2d::param_count(4, 16, 3), 592);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        Conv2d::new(&mut store, "c", 4, 16, 3, Init::FanIn, &mut rng);
        assert_eq!(store.count(), 592);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 3, 4, 3, Init::FanIn, &mut rng);
        assert!(conv.infer(&store, &Tensor::zeros(2, 4, 4)).is_err());
    }
}
