//! Max pooling with recorded argmax indices for backward routing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn out_extents(input_sp: &[usize], window: &[usize], stride: &[usize]) -> Result<Vec<usize>> {
    if window.len() != input_sp.len() || stride.len() != input_sp.len() {
        return Err(Error::Shape(format!(
            "pool window/stride rank must match spatial rank {}",
            input_sp.len()
        )));
    }
    if stride.iter().any(|&s| s == 0) || window.iter().any(|&w| w == 0) {
        return Err(Error::Contract("pool window and stride must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(input_sp.len());
    for d in 0..input_sp.len() {
        if window[d] > input_sp[d] {
            return Err(Error::Shape(format!(
                "pool window {} exceeds spatial extent {}",
                window[d], input_sp[d]
            )));
        }
        out.push((input_sp[d] - window[d]) / stride[d] + 1);
    }
    Ok(out)
}

/// Each output cell is the max over its window. The returned index buffer
/// holds, per output cell, the flat spatial index into the input of the
/// winning element; ties go to the lowest flat index.
pub fn maxpool_forward(input: &Tensor, window: &[usize], stride: &[usize]) -> Result<(Tensor, Vec<u32>)> {
    let rank = input.rank();
    if rank != 4 && rank != 5 {
        return Err(Error::Shape(format!(
            "pool input must be [batch, channels, spatial...], got {:?}",
            input.shape()
        )));
    }
    let sp = &input.shape()[2..];
    let out_sp = out_extents(sp, window, stride)?;
    let (batch, chans) = (input.shape()[0], input.shape()[1]);
    let mut shape = vec![batch, chans];
    shape.extend_from_slice(&out_sp);
    let mut out = Tensor::zeros_with(shape, input.precision());
    let mut argmax = vec![0u32; out.len()];

    let spatial_in: usize = sp.iter().product();
    let spatial_out: usize = out_sp.iter().product();
    let id = input.data();
    let od = out.data_mut();

    if sp.len() == 2 {
        let w = sp[1];
        let (oh, ow) = (out_sp[0], out_sp[1]);
        for nc in 0..batch * chans {
            let base = nc * spatial_in;
            let obase = nc * spatial_out;
            for oy in 0..oh {
                let y0 = oy * stride[0];
                for ox in 0..ow {
                    let x0 = ox * stride[1];
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..window[0] {
                        let row = (y0 + ky) * w + x0;
                        for kx in 0..window[1] {
                            let v = id[base + row + kx];
                            if v > best {
                                best = v;
                                best_idx = row + kx;
                            }
                        }
                    }
                    od[obase + oy * ow + ox] = best;
                    argmax[obase + oy * ow + ox] = best_idx as u32;
                }
            }
        }
    } else {
        let (s0, s1, s2) = (sp[0], sp[1], sp[2]);
        let _ = s0;
        let (o0, o1, o2) = (out_sp[0], out_sp[1], out_sp[2]);
        for nc in 0..batch * chans {
            let base = nc * spatial_in;
            let obase = nc * spatial_out;
            for oa in 0..o0 {
                let a0 = oa * stride[0];
                for ob in 0..o1 {
                    let b0 = ob * stride[1];
                    for oc in 0..o2 {
                        let c0 = oc * stride[2];
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ka in 0..window[0] {
                            for kb in 0..window[1] {
                                let row = ((a0 + ka) * s1 + b0 + kb) * s2 + c0;
                                for kc in 0..window[2] {
                                    let v = id[base + row + kc];
                                    if v > best {
                                        best = v;
                                        best_idx = row + kc;
                                    }
                                }
                            }
                        }
                        od[obase + (oa * o1 + ob) * o2 + oc] = best;
                        argmax[obase + (oa * o1 + ob) * o2 + oc] = best_idx as u32;
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Route each output gradient to the input cell that won the forward max.
pub fn maxpool_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Result<Tensor> {
    let (batch, chans) = (input_shape[0], input_shape[1]);
    if grad_out.shape()[0] != batch || grad_out.shape()[1] != chans {
        return Err(Error::Shape("pool grad batch/channel mismatch".into()));
    }
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape("argmax buffer does not match grad".into()));
    }
    let spatial_in: usize = input_shape[2..].iter().product();
    let spatial_out = if batch * chans == 0 { 0 } else { grad_out.len() / (batch * chans) };
    let mut d_in = vec![0.0f64; input_shape.iter().product()];
    let gd = grad_out.data();
    for nc in 0..batch * chans {
        let base = nc * spatial_in;
        for cell in 0..spatial_out {
            let g = gd[nc * spatial_out + cell];
            d_in[base + argmax[nc * spatial_out + cell] as usize] += g;
        }
    }
    Tensor::with_precision(input_shape.to_vec(), d_in, grad_out.precision())
}
