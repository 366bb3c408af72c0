//! Proportional scaling of a global CNN down to a tile-local CNN.

use crate::error::{Error, Result};
use crate::nn::ConvSpec;
use crate::zoo::graph::{Layer, NetworkGraph, Src};

/// Index of the last dense layer: the classifier, whose width never scales.
pub(crate) fn terminal_dense(layers: &[Layer]) -> Option<usize> {
    layers
        .iter()
        .rposition(|l| matches!(l, Layer::Dense { .. }))
}

fn div_ceil_min1(w: usize, n: usize) -> usize {
    w.div_ceil(n).max(1)
}

/// Build the proportionally smaller local network for one tile: identical
/// depth, kernels, and pooling; every convolution width and hidden dense
/// width becomes ceil(width / N) with a floor of 1; the classifier keeps
/// its K outputs; the input shape becomes the tile shape.
pub fn scale_local(global: &NetworkGraph, n: usize, tile_shape: &[usize], seed: u64) -> Result<NetworkGraph> {
    if n == 0 {
        return Err(Error::Contract("divisor N must be >= 1".into()));
    }
    if tile_shape.len() != global.input_shape.len() || tile_shape[0] != global.input_shape[0] {
        return Err(Error::Shape(format!(
            "tile shape {tile_shape:?} incompatible with global input {:?}",
            global.input_shape
        )));
    }
    let classifier = terminal_dense(&global.layers)
        .ok_or_else(|| Error::Contract("global graph has no dense classifier".into()))?;

    let mut new_layers: Vec<Layer> = Vec::with_capacity(global.layers.len());
    // Channel count per already-scaled layer (0 for non-spatial outputs).
    let mut chan: Vec<usize> = Vec::with_capacity(global.layers.len());
    let chan_of = |src: Src, chan: &[usize]| -> usize {
        match src {
            Src::Input => tile_shape[0],
            Src::Layer(j) => chan[j],
        }
    };

    for (i, layer) in global.layers.iter().enumerate() {
        let scaled = match layer {
            Layer::Conv { name, spec, input } => {
                let out = div_ceil_min1(spec.out_channels, n);
                let spec = ConvSpec {
                    kernel: spec.kernel.clone(),
                    in_channels: chan_of(*input, &chan),
                    out_channels: out,
                    stride: spec.stride.clone(),
                    padding: spec.padding,
                };
                chan.push(out);
                Layer::Conv { name: name.clone(), spec, input: *input }
            }
            Layer::MaxPool { window, stride, input } => {
                chan.push(chan_of(*input, &chan));
                Layer::MaxPool { window: window.clone(), stride: stride.clone(), input: *input }
            }
            Layer::Dense { name, units, input } => {
                let units = if i == classifier { *units } else { div_ceil_min1(*units, n) };
                chan.push(0);
                Layer::Dense { name: name.clone(), units, input: *input }
            }
            Layer::Relu { input } => {
                chan.push(chan_of(*input, &chan));
                Layer::Relu { input: *input }
            }
            Layer::Softmax { input } => {
                chan.push(0);
                Layer::Softmax { input: *input }
            }
            Layer::Add { lhs, rhs } => {
                chan.push(chan_of(*lhs, &chan));
                Layer::Add { lhs: *lhs, rhs: *rhs }
            }
            other => {
                return Err(Error::Contract(format!(
                    "cannot scale a graph containing {} layers",
                    other.kind()
                )))
            }
        };
        new_layers.push(scaled);
    }

    let mut graph = NetworkGraph::new(new_layers, tile_shape.to_vec(), global.num_classes, None)?;
    graph.randomize(seed);
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::build::{build_resnet20, build_vgg9};

    #[test]
    fn n1_is_structurally_identical() {
        let g = build_vgg9(&[3, 16, 16], 10, 8, 1).unwrap();
        let local = scale_local(&g, 1, &[3, 16, 16], 2).unwrap();
        let kinds: Vec<_> = g.layers.iter().map(Layer::kind).collect();
        let local_kinds: Vec<_> = local.layers.iter().map(Layer::kind).collect();
        assert_eq!(kinds, local_kinds);
        for (k, t) in &g.params {
            assert_eq!(t.shape(), local.params[k].shape(), "param {k}");
        }
    }

    #[test]
    fn vgg9_widths_follow_ceil_rule() {
        let g = build_vgg9(&[3, 32, 32], 10, 16, 1).unwrap();
        let local = scale_local(&g, 4, &[3, 16, 16], 2).unwrap();
        // Widths {16,32,64} -> {4,8,16}; hidden dense 128 -> 32.
        assert_eq!(local.params["conv1/weight"].shape(), &[4, 3, 3, 3]);
        assert_eq!(local.params["conv4/weight"].shape(), &[8, 4, 3, 3]);
        assert_eq!(local.params["conv7/weight"].shape(), &[16, 8, 3, 3]);
        assert_eq!(local.params["dense1/weight"].shape()[1], 32);
        // Classifier keeps K outputs.
        assert_eq!(local.params["dense2/weight"].shape()[1], 10);
        assert_eq!(local.input_shape, vec![3, 16, 16]);
    }

    #[test]
    fn width_floor_is_one() {
        let g = build_vgg9(&[1, 16, 16], 2, 2, 1).unwrap();
        let local = scale_local(&g, 64, &[1, 8, 8], 2).unwrap();
        assert_eq!(local.params["conv1/weight"].shape()[0], 1);
    }

    #[test]
    fn resnet_scales_with_depth_preserved() {
        let g = build_resnet20(&[3, 16, 16], 5, 8, 1).unwrap();
        let local = scale_local(&g, 2, &[3, 8, 8], 2).unwrap();
        let kinds: Vec<_> = g.layers.iter().map(Layer::kind).collect();
        let local_kinds: Vec<_> = local.layers.iter().map(Layer::kind).collect();
        assert_eq!(kinds, local_kinds);
        assert_eq!(local.params["conv1/weight"].shape()[0], 4);
        assert_eq!(local.params["dense1/weight"].shape()[1], 5);
    }

    #[test]
    fn tile_too_small_is_shape_error() {
        let g = build_vgg9(&[1, 32, 32], 4, 8, 1).unwrap();
        assert!(scale_local(&g, 4, &[1, 4, 4], 2).is_err());
    }
}
