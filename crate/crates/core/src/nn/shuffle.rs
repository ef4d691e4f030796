use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Sub-pixel rearrangement `(C·k²)×H×W -> C×(kH)×(kW)`:
/// `out[c, k·y + i, k·x + j] = in[c·k² + i·k + j, y, x]`.
pub fn pixel_shuffle_up(f: &Tensor, k: usize) -> Result<Tensor> {
    let (cin, h, w) = f.shape();
    if k == 0 || cin % (k * k) != 0 {
        return Err(dim_err(format!(
            "pixel shuffle by {k} needs channels divisible by {}, got {cin}",
            k * k
        )));
    }
    let c = cin / (k * k);
    Ok(Tensor::from_fn(c, h * k, w * k, |ch, y, x| {
        f.at(ch * k * k + (y % k) * k + x % k, y / k, x / k)
    }))
}

/// Inverse of [`pixel_shuffle_up`]; also its gradient, since the
/// rearrangement is a permutation.
pub fn pixel_unshuffle(f: &Tensor, k: usize) -> Result<Tensor> {
    let (c, h, w) = f.shape();
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(dim_err(format!("pixel unshuffle by {k} needs sizes divisible by {k}, got {h}x{w}")));
    }
    Ok(Tensor::from_fn(c * k * k, h / k, w / k, |cc, y, x| {
        let (ch, r) = (cc / (k * k), cc % (k * k));
        f.at(ch, y * k + r / k, x * k + r % k)
    }))
}
