use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient through a ReLU given its pre-activation input.
pub fn relu_backward(pre: &Tensor, dy: &Tensor) -> Tensor {
    pre.zip_map(dy, |x, g| if x > 0.0 { g } else { 0.0 })
}

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient through a sigmoid given its output.
pub fn sigmoid_backward(out: &Tensor, dy: &Tensor) -> Tensor {
    out.zip_map(dy, |s, g| g * s * (1.0 - s))
}
