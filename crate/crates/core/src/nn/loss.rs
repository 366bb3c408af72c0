//! Fused softmax cross-entropy loss.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::softmax_forward;

/// Mean cross-entropy of `logits` against integer labels.
///
/// Returns the scalar loss and the softmax probabilities (rows sum to 1).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 {
        return Err(Error::Shape(format!("loss expects rank-2 logits, got {:?}", logits.shape())));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Contract(format!("{} labels for batch of {n}", labels.len())));
    }
    if n == 0 {
        return Err(Error::Contract("cross-entropy over an empty batch".into()));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= k {
            return Err(Error::Contract(format!("label {l} at sample {i} out of range [0, {k})")));
        }
    }
    let probs = softmax_forward(logits)?;
    // -log p computed from the stabilized logits directly for accuracy.
    let ld = logits.data();
    let mut total = 0.0f64;
    for row in 0..n {
        let r = &ld[row * k..(row + 1) * k];
        let maxv = r.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = r.iter().map(|&x| (x - maxv).exp()).sum::<f64>().ln() + maxv;
        total += lse - r[labels[row] as usize];
    }
    Ok((total / n as f64, probs))
}

/// d logits = (p - onehot(label)) / batch, scaled by the incoming seed.
pub fn softmax_cross_entropy_backward(probs: &Tensor, labels: &[u32], seed: f64) -> Result<Tensor> {
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != n || n == 0 {
        return Err(Error::Contract("label/batch mismatch in loss backward".into()));
    }
    let scale = seed / n as f64;
    let mut d = probs.data().to_vec();
    for row in 0..n {
        d[row * k + labels[row] as usize] -= 1.0;
    }
    for v in &mut d {
        *v *= scale;
    }
    Tensor::with_precision(vec![n, k], d, probs.precision())
}
