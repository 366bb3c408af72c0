//! Architecture builders: VGG9, ResNet20, and the dense aggregation head.

use crate::error::{Error, Result};
use crate::nn::{ConvSpec, Padding};
use crate::zoo::graph::{Layer, NetworkGraph, Src};

/// Widths of the dense head's hidden layers.
pub const DNN_HEAD_HIDDEN: [usize; 4] = [128, 64, 32, 10];

fn check_input(input_shape: &[usize]) -> Result<usize> {
    let rank = input_shape.len().saturating_sub(1);
    if rank != 2 && rank != 3 {
        return Err(Error::Shape(format!(
            "expected [channels, 2 or 3 spatial extents], got {input_shape:?}"
        )));
    }
    if input_shape[1..].iter().any(|&e| e < 8) {
        return Err(Error::Shape(format!(
            "spatial extents must be >= 8 for three 2x pooling stages, got {input_shape:?}"
        )));
    }
    Ok(rank)
}

/// Nine 3x3[x3] same-padded convolutions in three stages of widths
/// {w, 2w, 4w}, a 2x max-pool after each stage, then dense(8w) -> dense(K)
/// with ReLU after every convolution and the hidden dense layer.
pub fn build_vgg9(input_shape: &[usize], k: usize, width: usize, seed: u64) -> Result<NetworkGraph> {
    let rank = check_input(input_shape)?;
    if width == 0 || k == 0 {
        return Err(Error::Contract("width and class count must be >= 1".into()));
    }
    let mut layers = Vec::new();
    let mut prev = Src::Input;
    let mut prev_channels = input_shape[0];
    let mut conv_index = 0;
    for stage in 0..3 {
        let w = width << stage;
        for _ in 0..3 {
            conv_index += 1;
            layers.push(Layer::Conv {
                name: format!("conv{conv_index}"),
                spec: ConvSpec::new(rank, 3, prev_channels, w, Padding::Same)?,
                input: prev,
            });
            layers.push(Layer::Relu { input: Src::Layer(layers.len() - 1) });
            prev = Src::Layer(layers.len() - 1);
            prev_channels = w;
        }
        layers.push(Layer::MaxPool {
            window: vec![2; rank],
            stride: vec![2; rank],
            input: prev,
        });
        prev = Src::Layer(layers.len() - 1);
    }
    layers.push(Layer::Dense { name: "dense1".into(), units: 8 * width, input: prev });
    layers.push(Layer::Relu { input: Src::Layer(layers.len() - 1) });
    layers.push(Layer::Dense { name: "dense2".into(), units: k, input: Src::Layer(layers.len() - 1) });
    layers.push(Layer::Softmax { input: Src::Layer(layers.len() - 1) });

    let mut graph = NetworkGraph::new(layers, input_shape.to_vec(), k, None)?;
    graph.randomize(seed);
    Ok(graph)
}

/// Twenty convolution blocks (conv + ReLU) with an identity skip from each
/// third block's input to the input three blocks later, widths {w, 2w, 4w}
/// over blocks 1-7 / 8-14 / 15-20 with a 2x pool after blocks 7 and 14.
/// Skips that cross a pool are downsampled by the same pooling; skips that
/// change width go through a learned 1x1 projection.
pub fn build_resnet20(input_shape: &[usize], k: usize, width: usize, seed: u64) -> Result<NetworkGraph> {
    let rank = check_input(input_shape)?;
    if width == 0 || k == 0 {
        return Err(Error::Contract("width and class count must be >= 1".into()));
    }
    let block_width = |b: usize| -> usize {
        if b < 7 {
            width
        } else if b < 14 {
            2 * width
        } else {
            4 * width
        }
    };
    // Channel count of the tensor feeding block b.
    let input_width = |b: usize, image_channels: usize| -> usize {
        if b == 0 {
            image_channels
        } else {
            block_width(b - 1)
        }
    };
    // Number of 2x pools applied before block b enters.
    let pools_before = |b: usize| -> usize {
        [7usize, 14].iter().filter(|&&p| b >= p).count()
    };

    let mut layers: Vec<Layer> = Vec::new();
    // Source producing the input of each block.
    let mut block_input: Vec<Src> = Vec::with_capacity(20);
    let mut prev = Src::Input;
    let c_img = input_shape[0];

    for b in 0..20usize {
        // Splice in the skip edge: input of block b gets the input of
        // block b-3 added, projected when shape or width changed.
        if b >= 3 && b % 3 == 0 {
            let mut skip = block_input[b - 3];
            let pools = pools_before(b) - pools_before(b - 3);
            for _ in 0..pools {
                layers.push(Layer::MaxPool {
                    window: vec![2; rank],
                    stride: vec![2; rank],
                    input: skip,
                });
                skip = Src::Layer(layers.len() - 1);
            }
            let w_src = input_width(b - 3, c_img);
            let w_dst = input_width(b, c_img);
            if w_src != w_dst {
                layers.push(Layer::Conv {
                    name: format!("skip{b}"),
                    spec: ConvSpec::new(rank, 1, w_src, w_dst, Padding::Valid)?,
                    input: skip,
                });
                skip = Src::Layer(layers.len() - 1);
            }
            layers.push(Layer::Add { lhs: prev, rhs: skip });
            prev = Src::Layer(layers.len() - 1);
        }
        block_input.push(prev);

        layers.push(Layer::Conv {
            name: format!("conv{}", b + 1),
            spec: ConvSpec::new(rank, 3, input_width(b, c_img), block_width(b), Padding::Same)?,
            input: prev,
        });
        layers.push(Layer::Relu { input: Src::Layer(layers.len() - 1) });
        prev = Src::Layer(layers.len() - 1);

        if b == 6 || b == 13 {
            layers.push(Layer::MaxPool {
                window: vec![2; rank],
                stride: vec![2; rank],
                input: prev,
            });
            prev = Src::Layer(layers.len() - 1);
        }
    }

    layers.push(Layer::Dense { name: "dense1".into(), units: k, input: prev });
    layers.push(Layer::Softmax { input: Src::Layer(layers.len() - 1) });

    let mut graph = NetworkGraph::new(layers, input_shape.to_vec(), k, None)?;
    graph.randomize(seed);
    Ok(graph)
}

/// Dense aggregation head: input of K*N local probabilities, hidden layers
/// {128, 64, 32, 10} with ReLU, output K with softmax.
pub fn build_dnn_head(k: usize, n: usize, seed: u64) -> Result<NetworkGraph> {
    if k == 0 || n == 0 {
        return Err(Error::Contract("class and tile counts must be >= 1".into()));
    }
    let mut layers = Vec::new();
    let mut prev = Src::Input;
    for (i, &units) in DNN_HEAD_HIDDEN.iter().enumerate() {
        layers.push(Layer::Dense { name: format!("dense{}", i + 1), units, input: prev });
        layers.push(Layer::Relu { input: Src::Layer(layers.len() - 1) });
        prev = Src::Layer(layers.len() - 1);
    }
    layers.push(Layer::Dense {
        name: format!("dense{}", DNN_HEAD_HIDDEN.len() + 1),
        units: k,
        input: prev,
    });
    layers.push(Layer::Softmax { input: Src::Layer(layers.len() - 1) });
    let mut graph = NetworkGraph::new(layers, vec![k * n], k, None)?;
    graph.randomize(seed);
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg9_has_nine_convs_and_matching_head() {
        let g = build_vgg9(&[3, 32, 32], 10, 16, 1).unwrap();
        let convs = g.layers.iter().filter(|l| matches!(l, Layer::Conv { .. })).count();
        assert_eq!(convs, 9);
        let shapes = g.infer_shapes().unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![10]);
        // 32 -> 16 -> 8 -> 4 spatial, 64 channels.
        assert_eq!(g.params["dense1/weight"].shape(), &[64 * 4 * 4, 128]);
    }

    #[test]
    fn vgg9_3d_uses_cubic_kernels() {
        let g = build_vgg9(&[1, 16, 16, 8], 2, 4, 1).unwrap();
        match &g.layers[0] {
            Layer::Conv { spec, .. } => assert_eq!(spec.kernel, vec![3, 3, 3]),
            _ => panic!("first layer must be a conv"),
        }
    }

    #[test]
    fn vgg9_rejects_small_inputs() {
        assert!(build_vgg9(&[1, 4, 4], 2, 4, 1).is_err());
    }

    #[test]
    fn resnet20_has_twenty_convs_and_six_skips() {
        let g = build_resnet20(&[3, 32, 32], 10, 8, 1).unwrap();
        let convs = g
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::Conv { name, .. } if name.starts_with("conv")))
            .count();
        assert_eq!(convs, 20);
        let adds = g.layers.iter().filter(|l| matches!(l, Layer::Add { .. })).count();
        assert_eq!(adds, 6);
    }

    #[test]
    fn dnn_head_input_sizes_match_tile_grid() {
        for (k, n) in [(10usize, 4usize), (2, 32), (5, 16)] {
            let g = build_dnn_head(k, n, 0).unwrap();
            assert_eq!(g.input_shape, vec![k * n]);
            assert_eq!(g.num_classes, k);
            assert_eq!(g.params["dense1/weight"].shape(), &[k * n, 128]);
        }
    }
}
