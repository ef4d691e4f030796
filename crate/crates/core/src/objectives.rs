//! Training losses. All norms are means, so values do not depend on
//! resolution.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_BETA: f64 = 0.5;

/// A scalar loss with its named sub-terms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossValue {
    pub value: f64,
    pub components: Vec<(String, f64)>,
}

impl LossValue {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// sRGB->RAW loss: `mean|a - b| + mean|ln max(a, eps) - ln max(b, eps)|`.
pub fn loss_s2r(raw_hat: &Tensor, raw_gt: &Tensor, epsilon: f64) -> Result<LossValue> {
    loss_s2r_with_grad(raw_hat, raw_gt, epsilon).map(|(l, _)| l)
}

/// As [`loss_s2r`], with the gradient on `raw_hat`. The clamp has zero
/// slope below `eps`.
pub fn loss_s2r_with_grad(raw_hat: &Tensor, raw_gt: &Tensor, epsilon: f64) -> Result<(LossValue, Tensor)> {
    raw_hat.ensure_same_shape(raw_gt, "loss_s2r")?;
    if !(epsilon > 0.0) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = raw_hat.len() as f64;
    let mut l1 = 0.0;
    let mut llog = 0.0;
    let mut grad = Tensor::zeros_like(raw_hat);
    for ((&a, &b), gv) in raw_hat.data().iter().zip(raw_gt.data()).zip(grad.data_mut()) {
        let d = a - b;
        l1 += d.abs();
        let (la, lb) = (a.max(epsilon).ln(), b.max(epsilon).ln());
        llog += (la - lb).abs();
        let mut g = sign(d);
        if a > epsilon {
            g += sign(la - lb) / a;
        }
        *gv = g / n;
    }
    let (l1, llog) = (l1 / n, llog / n);
    Ok((
        LossValue {
            value: l1 + llog,
            components: vec![("l1".into(), l1), ("log_l1".into(), llog)],
        },
        grad,
    ))
}

/// RAW->sRGB loss: mean absolute error.
pub fn loss_r2s(rgb_hat: &Tensor, rgb_gt: &Tensor) -> Result<LossValue> {
    loss_r2s_with_grad(rgb_hat, rgb_gt).map(|(l, _)| l)
}

pub fn loss_r2s_with_grad(rgb_hat: &Tensor, rgb_gt: &Tensor) -> Result<(LossValue, Tensor)> {
    rgb_hat.ensure_same_shape(rgb_gt, "loss_r2s")?;
    let n = rgb_hat.len() as f64;
    let grad = rgb_hat.zip_map(rgb_gt, |a, b| sign(a - b) / n);
    let l1 = rgb_hat
        .data()
        .iter()
        .zip(rgb_gt.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    Ok((
        LossValue {
            value: l1,
            components: vec![("l1".into(), l1)],
        },
        grad,
    ))
}

/// Gradients of the joint loss on the two network outputs.
///
/// `d_raw_hat` holds only the weighted sRGB->RAW term; it is applied to
/// the sRGB->RAW branch after the RAW->sRGB backward pass, so the
/// RAW->sRGB parameters never see it.
#[derive(Clone, Debug)]
pub struct JointGrads {
    pub d_raw_hat: Tensor,
    pub d_rgb_hat: Tensor,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Argument(format!("beta must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

/// `beta * loss_s2r + (1 - beta) * loss_r2s`.
pub fn loss_joint(
    raw_hat: &Tensor,
    raw_gt: &Tensor,
    rgb_hat: &Tensor,
    rgb_gt: &Tensor,
    beta: f64,
    epsilon: f64,
) -> Result<LossValue> {
    loss_joint_with_grad(raw_hat, raw_gt, rgb_hat, rgb_gt, beta, epsilon).map(|(l, _)| l)
}

pub fn loss_joint_with_grad(
    raw_hat: &Tensor,
    raw_gt: &Tensor,
    rgb_hat: &Tensor,
    rgb_gt: &Tensor,
    beta: f64,
    epsilon: f64,
) -> Result<(LossValue, JointGrads)> {
    check_beta(beta)?;
    let (s2r, g_raw) = loss_s2r_with_grad(raw_hat, raw_gt, epsilon)?;
    let (r2s, g_rgb) = loss_r2s_with_grad(rgb_hat, rgb_gt)?;
    let value = beta * s2r.value + (1.0 - beta) * r2s.value;
    Ok((
        LossValue {
            value,
            components: vec![("s2r".into(), s2r.value), ("r2s".into(), r2s.value)],
        },
        JointGrads {
            d_raw_hat: g_raw.scale(beta),
            d_rgb_hat: g_rgb.scale(1.0 - beta),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_give_zero() {
        let t = Tensor::from_fn(1, 4, 4, |_, y, x| (y + x) as f64 / 8.0);
        assert_eq!(loss_s2r(&t, &t, DEFAULT_EPSILON).unwrap().value, 0.0);
        assert_eq!(loss_r2s(&t, &t).unwrap().value, 0.0);
    }

    #[test]
    fn clamp_semantics_below_epsilon() {
        let eps = 1e-3;
        let a = Tensor::filled(1, 1, 1, eps / 2.0);
        let b = Tensor::filled(1, 1, 1, eps);
        let l = loss_s2r(&a, &b, eps).unwrap();
        assert_eq!(l.component("log_l1"), Some(0.0));
        assert!((l.value - eps / 2.0).abs() < 1e-18);
    }

    #[test]
    fn constant_offset_r2s() {
        let a = Tensor::filled(3, 4, 4, 0.3);
        let b = a.map(|v| v + 0.1);
        assert!((loss_r2s(&b, &a).unwrap().value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn joint_is_convex_combination() {
        let a = Tensor::filled(1, 2, 2, 0.5);
        let b = Tensor::filled(1, 2, 2, 0.25);
        let s2r = loss_s2r(&a, &b, DEFAULT_EPSILON).unwrap().value;
        let r2s = loss_r2s(&a, &b).unwrap().value;
        let j = loss_joint(&a, &b, &a, &b, 0.3, DEFAULT_EPSILON).unwrap();
        assert!((j.value - (0.3 * s2r + 0.7 * r2s)).abs() < 1e-15);
    }

    #[test]
    fn beta_outside_unit_interval_rejected() {
        let a = Tensor::zeros(1, 2, 2);
        for beta in [0.0, 1.0, -0.5, 1.5] {
            assert!(matches!(
                loss_joint(&a, &a, &a, &a, beta, DEFAULT_EPSILON),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let a = Tensor::zeros(1, 2, 2);
        let b = Tensor::zeros(1, 2, 4);
        assert!(matches!(loss_r2s(&a, &b), Err(Error::Dimension(_))));
        assert!(matches!(loss_s2r(&a, &b, 1e-4), Err(Error::Dimension(_))));
    }
}
