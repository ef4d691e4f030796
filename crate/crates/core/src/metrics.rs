//! Full-reference quality metrics.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical images (and the ceiling for all others).
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.ensure_same_shape(b, "mse")?;
    if a.is_empty() {
        return Err(dim_err("mse of empty images"));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// `10 log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

fn ssim_window(n: usize) -> Vec<f64> {
    let r = (n / 2) as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable filtering over the region where the window fits entirely.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().enumerate().map(|(j, kv)| kv * plane[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(j, kv)| kv * tmp[(y + j) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> f64 {
    let mut n = SSIM_WINDOW.min(h).min(w);
    if n % 2 == 0 {
        n -= 1;
    }
    let k = ssim_window(n);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let (mu_a, oh, ow) = filter_valid(a, h, w, &k);
    let (mu_b, _, _) = filter_valid(b, h, w, &k);
    let (saa, _, _) = filter_valid(&prod(&|x, _| x * x), h, w, &k);
    let (sbb, _, _) = filter_valid(&prod(&|_, y| y * y), h, w, &k);
    let (sab, _, _) = filter_valid(&prod(&|x, y| x * y), h, w, &k);
    let mut acc = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = saa[i] - ma * ma;
        let vb = sbb[i] - mb * mb;
        let cov = sab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    acc / (oh * ow) as f64
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5) over the positions
/// where the window fits, averaged over channels. Images smaller than the
/// window use the largest odd window that fits.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (c, h, w) = a.shape();
    if c == 0 || h == 0 || w == 0 {
        return Err(dim_err("ssim of empty images"));
    }
    let total: f64 = (0..c).map(|ch| ssim_plane(a.plane(ch), b.plane(ch), h, w, peak)).sum();
    Ok(total / c as f64)
}
