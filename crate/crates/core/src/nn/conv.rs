//! Direct (loop-nest) convolution, forward and backward, for 2D and 3D.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ConvSpec;

/// Gradients produced by [`conv_backward`].
pub struct ConvGrads {
    /// Gradient w.r.t. the input; `None` when the caller did not request it.
    pub d_input: Option<Tensor>,
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}

fn check_shapes(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: &Tensor) -> Result<Vec<usize>> {
    let rank = spec.rank();
    if input.rank() != rank + 2 {
        return Err(Error::Shape(format!(
            "convolution input must be [batch, channels, {rank} spatial dims], got {:?}",
            input.shape()
        )));
    }
    if input.shape()[1] != spec.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, spec expects {}",
            input.shape()[1],
            spec.in_channels
        )));
    }
    if weights.shape() != spec.weight_shape().as_slice() {
        return Err(Error::Shape(format!(
            "weight shape {:?} does not match spec {:?}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::Shape(format!(
            "bias shape {:?}, expected [{}]",
            bias.shape(),
            spec.out_channels
        )));
    }
    spec.out_extents(&input.shape()[2..])
}

/// out[n,o,p] = bias[o] + sum_{c,k} w[o,c,k] * in[n,c, p*stride + k - pad].
pub fn conv_forward(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let out_sp = check_shapes(input, spec, weights, bias)?;
    let precision = input.precision().join(weights.precision());
    let batch = input.shape()[0];
    let mut out_shape = vec![batch, spec.out_channels];
    out_shape.extend_from_slice(&out_sp);
    let mut out = Tensor::zeros_with(out_shape, precision);
    match spec.rank() {
        2 => forward2d(input, spec, weights, bias, &out_sp, &mut out),
        3 => forward3d(input, spec, weights, bias, &out_sp, &mut out),
        _ => unreachable!(),
    }
    Ok(out)
}

/// Backward pass; pass `need_input_grad = false` for layers that sit
/// directly on the graph input.
pub fn conv_backward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let out_sp = spec.out_extents(&input.shape()[2..])?;
    let batch = input.shape()[0];
    let mut expect = vec![batch, spec.out_channels];
    expect.extend_from_slice(&out_sp);
    if grad_out.shape() != expect.as_slice() {
        return Err(Error::Shape(format!(
            "grad shape {:?} does not match conv output {:?}",
            grad_out.shape(),
            expect
        )));
    }
    let mut d_in = if need_input_grad { vec![0.0f64; input.len()] } else { Vec::new() };
    let mut d_w = vec![0.0f64; weights.len()];
    let mut d_b = vec![0.0f64; spec.out_channels];
    match spec.rank() {
        2 => backward2d(input, spec, weights, grad_out, &out_sp, &mut d_in, &mut d_w, &mut d_b, need_input_grad),
        3 => backward3d(input, spec, weights, grad_out, &out_sp, &mut d_in, &mut d_w, &mut d_b, need_input_grad),
        _ => unreachable!(),
    }
    let p = input.precision().join(weights.precision());
    let d_input = if need_input_grad {
        Some(Tensor::with_precision(input.shape().to_vec(), d_in, p)?)
    } else {
        None
    };
    Ok(ConvGrads {
        d_input,
        d_weights: Tensor::with_precision(weights.shape().to_vec(), d_w, p)?,
        d_bias: Tensor::with_precision(vec![spec.out_channels], d_b, p)?,
    })
}

/// Clip a kernel range so `origin + k` stays inside `[0, extent)`.
#[inline]
fn kernel_range(origin: isize, kernel: usize, extent: usize) -> (usize, usize) {
    let lo = if origin < 0 { (-origin) as usize } else { 0 };
    let hi = ((extent as isize - origin).max(0) as usize).min(kernel);
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
fn forward2d(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: &Tensor, out_sp: &[usize], out: &mut Tensor) {
    let (batch, cin) = (input.shape()[0], input.shape()[1]);
    let (h, w) = (input.shape()[2], input.shape()[3]);
    let (kh, kw) = (spec.kernel[0], spec.kernel[1]);
    let (sh, sw) = (spec.stride[0], spec.stride[1]);
    let pad = spec.pad();
    let (oh, ow) = (out_sp[0], out_sp[1]);
    let cout = spec.out_channels;
    let precision = out.precision();

    let id = input.data();
    let wd = weights.data();
    let bd = bias.data();
    let od = out.data_mut();

    for n in 0..batch {
        for o in 0..cout {
            let b = bd[o];
            for oy in 0..oh {
                let iy0 = (oy * sh) as isize - pad[0] as isize;
                let (ky_lo, ky_hi) = kernel_range(iy0, kh, h);
                for ox in 0..ow {
                    let ix0 = (ox * sw) as isize - pad[1] as isize;
                    let (kx_lo, kx_hi) = kernel_range(ix0, kw, w);
                    let mut acc = b;
                    for c in 0..cin {
                        let in_base = ((n * cin + c) * h) as isize;
                        let w_base = ((o * cin + c) * kh) as isize;
                        for ky in ky_lo..ky_hi {
                            let irow = ((in_base + iy0 + ky as isize) as usize) * w;
                            let wrow = ((w_base + ky as isize) as usize) * kw;
                            for kx in kx_lo..kx_hi {
                                let ix = (ix0 + kx as isize) as usize;
                                acc += id[irow + ix] * wd[wrow + kx];
                            }
                        }
                    }
                    od[((n * cout + o) * oh + oy) * ow + ox] = precision.store(acc);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward2d(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    grad_out: &Tensor,
    out_sp: &[usize],
    d_in: &mut [f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    need_input_grad: bool,
) {
    let (batch, cin) = (input.shape()[0], input.shape()[1]);
    let (h, w) = (input.shape()[2], input.shape()[3]);
    let (kh, kw) = (spec.kernel[0], spec.kernel[1]);
    let (sh, sw) = (spec.stride[0], spec.stride[1]);
    let pad = spec.pad();
    let (oh, ow) = (out_sp[0], out_sp[1]);
    let cout = spec.out_channels;

    let id = input.data();
    let wd = weights.data();
    let gd = grad_out.data();

    for n in 0..batch {
        for o in 0..cout {
            for oy in 0..oh {
                let iy0 = (oy * sh) as isize - pad[0] as isize;
                let (ky_lo, ky_hi) = kernel_range(iy0, kh, h);
                for ox in 0..ow {
                    let ix0 = (ox * sw) as isize - pad[1] as isize;
                    let (kx_lo, kx_hi) = kernel_range(ix0, kw, w);
                    let g = gd[((n * cout + o) * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    d_b[o] += g;
                    for c in 0..cin {
                        let in_base = ((n * cin + c) * h) as isize;
                        let w_base = ((o * cin + c) * kh) as isize;
                        for ky in ky_lo..ky_hi {
                            let irow = ((in_base + iy0 + ky as isize) as usize) * w;
                            let wrow = ((w_base + ky as isize) as usize) * kw;
                            for kx in kx_lo..kx_hi {
                                let ix = (ix0 + kx as isize) as usize;
                                d_w[wrow + kx] += g * id[irow + ix];
                                if need_input_grad {
                                    d_in[irow + ix] += g * wd[wrow + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn forward3d(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: &Tensor, out_sp: &[usize], out: &mut Tensor) {
    let (batch, cin) = (input.shape()[0], input.shape()[1]);
    let (s0, s1, s2) = (input.shape()[2], input.shape()[3], input.shape()[4]);
    let (k0, k1, k2) = (spec.kernel[0], spec.kernel[1], spec.kernel[2]);
    let (st0, st1, st2) = (spec.stride[0], spec.stride[1], spec.stride[2]);
    let pad = spec.pad();
    let (o0, o1, o2) = (out_sp[0], out_sp[1], out_sp[2]);
    let cout = spec.out_channels;
    let precision = out.precision();

    let id = input.data();
    let wd = weights.data();
    let bd = bias.data();
    let od = out.data_mut();

    for n in 0..batch {
        for o in 0..cout {
            let b = bd[o];
            for oa in 0..o0 {
                let ia0 = (oa * st0) as isize - pad[0] as isize;
                let (ka_lo, ka_hi) = kernel_range(ia0, k0, s0);
                for ob in 0..o1 {
                    let ib0 = (ob * st1) as isize - pad[1] as isize;
                    let (kb_lo, kb_hi) = kernel_range(ib0, k1, s1);
                    for oc in 0..o2 {
                        let ic0 = (oc * st2) as isize - pad[2] as isize;
                        let (kc_lo, kc_hi) = kernel_range(ic0, k2, s2);
                        let mut acc = b;
                        for c in 0..cin {
                            let in_c = (n * cin + c) * s0;
                            let w_c = (o * cin + c) * k0;
                            for ka in ka_lo..ka_hi {
                                let ia = (ia0 + ka as isize) as usize;
                                for kb in kb_lo..kb_hi {
                                    let ib = (ib0 + kb as isize) as usize;
                                    let irow = ((in_c + ia) * s1 + ib) * s2;
                                    let wrow = ((w_c + ka) * k1 + kb) * k2;
                                    for kc in kc_lo..kc_hi {
                                        let ic = (ic0 + kc as isize) as usize;
                                        acc += id[irow + ic] * wd[wrow + kc];
                                    }
                                }
                            }
                        }
                        od[(((n * cout + o) * o0 + oa) * o1 + ob) * o2 + oc] = precision.store(acc);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward3d(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    grad_out: &Tensor,
    out_sp: &[usize],
    d_in: &mut [f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    need_input_grad: bool,
) {
    let (batch, cin) = (input.shape()[0], input.shape()[1]);
    let (s0, s1, s2) = (input.shape()[2], input.shape()[3], input.shape()[4]);
    let (k0, k1, k2) = (spec.kernel[0], spec.kernel[1], spec.kernel[2]);
    let (st0, st1, st2) = (spec.stride[0], spec.stride[1], spec.stride[2]);
    let pad = spec.pad();
    let (o0, o1, o2) = (out_sp[0], out_sp[1], out_sp[2]);
    let cout = spec.out_channels;

    let id = input.data();
    let wd = weights.data();
    let gd = grad_out.data();

    for n in 0..batch {
        for o in 0..cout {
            for oa in 0..o0 {
                let ia0 = (oa * st0) as isize - pad[0] as isize;
                let (ka_lo, ka_hi) = kernel_range(ia0, k0, s0);
                for ob in 0..o1 {
                    let ib0 = (ob * st1) as isize - pad[1] as isize;
                    let (kb_lo, kb_hi) = kernel_range(ib0, k1, s1);
                    for oc in 0..o2 {
                        let ic0 = (oc * st2) as isize - pad[2] as isize;
                        let (kc_lo, kc_hi) = kernel_range(ic0, k2, s2);
                        let g = gd[(((n * cout + o) * o0 + oa) * o1 + ob) * o2 + oc];
                        if g == 0.0 {
                            continue;
                        }
                        d_b[o] += g;
                        for c in 0..cin {
                            let in_c = (n * cin + c) * s0;
                            let w_c = (o * cin + c) * k0;
                            for ka in ka_lo..ka_hi {
                                let ia = (ia0 + ka as isize) as usize;
                                for kb in kb_lo..kb_hi {
                                    let ib = (ib0 + kb as isize) as usize;
                                    let irow = ((in_c + ia) * s1 + ib) * s2;
                                    let wrow = ((w_c + ka) * k1 + kb) * k2;
                                    for kc in kc_lo..kc_hi {
                                        let ic = (ic0 + kc as isize) as usize;
                                        d_w[wrow + kc] += g * id[irow + ic];
                                        if need_input_grad {
                                            d_in[irow + ic] += g * wd[wrow + kc];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Padding;
    use super::*;

    #[test]
    fn one_by_one_identity_kernel_passes_input_through() {
        let spec = ConvSpec::new(2, 1, 1, 1, Padding::Same).unwrap();
        let input = Tensor::from_vec(vec![1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(vec![1]);
        let out = conv_forward(&input, &spec, &w, &b).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn all_ones_valid_conv_sums_window() {
        // 3x3 ones kernel over a 3x3 ones image, valid padding -> single 9.
        let spec = ConvSpec::new(2, 3, 1, 1, Padding::Valid).unwrap();
        let input = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let w = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(vec![1]);
        let out = conv_forward(&input, &spec, &w, &b).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn same_padding_preserves_extents_at_stride_one() {
        for (rank, shape) in [(2usize, vec![2, 3, 7, 5]), (3usize, vec![1, 2, 4, 5, 6])] {
            let spec = ConvSpec::new(rank, 3, shape[1], 4, Padding::Same).unwrap();
            let input = Tensor::full(shape.clone(), 0.5);
            let w = Tensor::full(spec.weight_shape(), 0.1);
            let b = Tensor::zeros(vec![4]);
            let out = conv_forward(&input, &spec, &w, &b).unwrap();
            assert_eq!(&out.shape()[2..], &shape[2..]);
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let spec = ConvSpec::new(2, 3, 2, 1, Padding::Same).unwrap();
        let input = Tensor::zeros(vec![1, 3, 4, 4]);
        let w = Tensor::zeros(spec.weight_shape());
        let b = Tensor::zeros(vec![1]);
        assert!(conv_forward(&input, &spec, &w, &b).is_err());
    }

    #[test]
    fn too_small_for_valid_kernel_is_shape_error() {
        let spec = ConvSpec::new(2, 3, 1, 1, Padding::Valid).unwrap();
        let input = Tensor::zeros(vec![1, 1, 2, 5]);
        let w = Tensor::zeros(spec.weight_shape());
        let b = Tensor::zeros(vec![1]);
        assert!(conv_forward(&input, &spec, &w, &b).is_err());
    }
}
