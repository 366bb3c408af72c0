//! ReLU and row-wise softmax.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// max(0, x) elementwise. The subgradient at zero is 0.
pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape("relu grad shape mismatch".into()));
    }
    let p = grad_out.precision();
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::with_precision(input.shape().to_vec(), data, p)
}

/// Row-wise softmax of a rank-2 tensor, stabilized by max subtraction.
pub fn softmax_forward(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::Shape(format!("softmax expects rank-2 logits, got {:?}", logits.shape())));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let p = logits.precision();
    let mut out = Tensor::zeros_with(vec![n, k], p);
    let ld = logits.data();
    let od = out.data_mut();
    for row in 0..n {
        let r = &ld[row * k..(row + 1) * k];
        let maxv = r.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut denom = 0.0f64;
        for &x in r {
            denom += (x - maxv).exp();
        }
        for (j, &x) in r.iter().enumerate() {
            od[row * k + j] = p.store((x - maxv).exp() / denom);
        }
    }
    Ok(out)
}

/// d logits = y .* (g - sum_j g_j y_j) per row, where y is the softmax output.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if probs.shape() != grad_out.shape() {
        return Err(Error::Shape("softmax grad shape mismatch".into()));
    }
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    let p = grad_out.precision().join(probs.precision());
    let mut out = Tensor::zeros_with(vec![n, k], p);
    let yd = probs.data();
    let gd = grad_out.data();
    let od = out.data_mut();
    for row in 0..n {
        let mut dot = 0.0f64;
        for j in 0..k {
            dot += gd[row * k + j] * yd[row * k + j];
        }
        for j in 0..k {
            od[row * k + j] = p.store(yd[row * k + j] * (gd[row * k + j] - dot));
        }
    }
    Ok(out)
}
