use super::conv::reflect;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Normalized 1-D Gaussian taps over `[-r, r]`, `r = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("blur sigma must be positive, got {sigma}")));
    }
    let r = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / s).collect())
}

/// Separable Gaussian blur of every channel with reflective borders.
pub fn gaussian_blur(img: &Tensor, sigma: f64) -> Result<Tensor> {
    let k = gaussian_kernel(sigma)?;
    let r = (k.len() / 2) as isize;
    let (c, h, w) = img.shape();
    let mut tmp = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = img.plane(ch);
        let dst = tmp.plane_mut(ch);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    acc += kv * row[reflect(x as isize + j as isize - r, w)];
                }
                dst[y * w + x] = acc;
            }
        }
    }
    let mut out = Tensor::zeros(c, h, w);
    let rows: Vec<Vec<usize>> = (0..h)
        .map(|y| (0..k.len()).map(|j| reflect(y as isize + j as isize - r, h)).collect())
        .collect();
    for ch in 0..c {
        let src = tmp.plane(ch);
        let dst = out.plane_mut(ch);
        for (y, taps) in rows.iter().enumerate() {
            let d = &mut dst[y * w..(y + 1) * w];
            for (&kv, &sy) in k.iter().zip(taps) {
                let s = &src[sy * w..(sy + 1) * w];
                for (dv, sv) in d.iter_mut().zip(s) {
                    *dv += kv * sv;
                }
            }
        }
    }
    Ok(out)
}
