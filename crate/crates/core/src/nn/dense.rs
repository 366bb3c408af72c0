//! Fully connected layer kernels.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct DenseGrads {
    pub d_input: Option<Tensor>,
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}

/// Row-wise affine map: out[n, u] = bias[u] + sum_f in[n, f] * w[f, u].
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.rank() != 2 || weights.rank() != 2 {
        return Err(Error::Shape(format!(
            "dense expects rank-2 input and weights, got {:?} and {:?}",
            input.shape(),
            weights.shape()
        )));
    }
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let (fw, u) = (weights.shape()[0], weights.shape()[1]);
    if f != fw || bias.shape() != [u] {
        return Err(Error::Shape(format!(
            "dense shapes disagree: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let p = input.precision().join(weights.precision());
    let mut out = Tensor::zeros_with(vec![n, u], p);
    let id = input.data();
    let wd = weights.data();
    let bd = bias.data();
    let od = out.data_mut();
    for row in 0..n {
        let irow = &id[row * f..(row + 1) * f];
        for col in 0..u {
            let mut acc = bd[col];
            for (k, &x) in irow.iter().enumerate() {
                acc += x * wd[k * u + col];
            }
            od[row * u + col] = p.store(acc);
        }
    }
    Ok(out)
}

pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<DenseGrads> {
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let u = weights.shape()[1];
    if grad_out.shape() != [n, u] {
        return Err(Error::Shape(format!(
            "dense grad shape {:?}, expected [{n}, {u}]",
            grad_out.shape()
        )));
    }
    let p = input.precision().join(weights.precision());
    let id = input.data();
    let wd = weights.data();
    let gd = grad_out.data();

    let mut d_w = vec![0.0f64; f * u];
    let mut d_b = vec![0.0f64; u];
    for row in 0..n {
        for col in 0..u {
            let g = gd[row * u + col];
            d_b[col] += g;
            if g != 0.0 {
                for k in 0..f {
                    d_w[k * u + col] += g * id[row * f + k];
                }
            }
        }
    }
    let d_input = if need_input_grad {
        let mut d_in = vec![0.0f64; n * f];
        for row in 0..n {
            for k in 0..f {
                let mut acc = 0.0;
                for col in 0..u {
                    acc += gd[row * u + col] * wd[k * u + col];
                }
                d_in[row * f + k] = acc;
            }
        }
        Some(Tensor::with_precision(vec![n, f], d_in, p)?)
    } else {
        None
    };
    Ok(DenseGrads {
        d_input,
        d_weights: Tensor::with_precision(vec![f, u], d_w, p)?,
        d_bias: Tensor::with_precision(vec![u], d_b, p)?,
    })
}
