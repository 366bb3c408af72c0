//! Composition of trained local networks into global models: the coherent
//! CNN-DNN assembly and the channel-decomposed global CNN with zero
//! cross-group coupling.

use std::ops::Range;

use crate::decomp::Decomposition;
use crate::error::{Error, Result};
use crate::nn::ConvSpec;
use crate::tensor::Tensor;
use crate::zoo::graph::{Layer, NetworkGraph, ParamSet, Src};
use crate::zoo::scale::{scale_local, terminal_dense};

fn shift(src: Src, offset: usize, input_becomes: Src) -> Src {
    match src {
        Src::Input => input_becomes,
        Src::Layer(j) => Src::Layer(j + offset),
    }
}

/// Assemble the coherent CNN-DNN: a tile router feeding N branches whose
/// probability outputs are concatenated (plan order) into the dense head.
/// Branch parameters are copied bit-for-bit from the trained locals; the
/// head's parameters are taken from `head` as given.
pub fn assemble_cnn_dnn(
    locals: &[NetworkGraph],
    head: &NetworkGraph,
    plan: &Decomposition,
) -> Result<NetworkGraph> {
    let n = plan.tile_count();
    if locals.len() != n {
        return Err(Error::Contract(format!(
            "{} local networks for a plan of {n} tiles",
            locals.len()
        )));
    }
    let k = head.num_classes;
    if head.input_shape != vec![k * n] {
        return Err(Error::Contract(format!(
            "head input {:?} does not match K*N = {}",
            head.input_shape,
            k * n
        )));
    }
    for (i, local) in locals.iter().enumerate() {
        if local.num_classes != k {
            return Err(Error::Contract(format!(
                "local {i} outputs {} classes, head aggregates {k}",
                local.num_classes
            )));
        }
        if local.input_shape != plan.tile_shape(i) {
            return Err(Error::Contract(format!(
                "local {i} input {:?} does not match tile shape {:?} (tile order must follow the plan)",
                local.input_shape,
                plan.tile_shape(i)
            )));
        }
    }

    let mut layers: Vec<Layer> = Vec::new();
    let mut params = ParamSet::new();
    let mut marks = std::collections::BTreeMap::new();
    let mut branch_outputs = Vec::with_capacity(n);

    for (i, local) in locals.iter().enumerate() {
        layers.push(Layer::TileSlice { tile: i, input: Src::Input });
        let tile_node = Src::Layer(layers.len() - 1);
        let offset = layers.len();
        let prefixed = local.clone().with_param_prefix(&format!("branch{i}/"));
        for layer in &prefixed.layers {
            layers.push(remap_layer(layer, offset, tile_node));
        }
        params.extend(prefixed.params);
        let out_idx = offset + local.output_layer();
        branch_outputs.push(Src::Layer(out_idx));
        marks.insert(format!("branch{i}/output"), out_idx);
    }

    layers.push(Layer::Concat { inputs: branch_outputs });
    let concat_node = Src::Layer(layers.len() - 1);
    marks.insert("concat".into(), layers.len() - 1);

    let offset = layers.len();
    let prefixed_head = head.clone().with_param_prefix("head/");
    for layer in &prefixed_head.layers {
        layers.push(remap_layer(layer, offset, concat_node));
    }
    params.extend(prefixed_head.params);

    let mut graph = NetworkGraph::new(layers, plan.global_shape(), k, Some(plan.clone()))?;
    graph.marks = marks;
    install_params(&mut graph, params)?;
    Ok(graph)
}

fn remap_layer(layer: &Layer, offset: usize, input_becomes: Src) -> Layer {
    match layer {
        Layer::Conv { name, spec, input } => Layer::Conv {
            name: name.clone(),
            spec: spec.clone(),
            input: shift(*input, offset, input_becomes),
        },
        Layer::MaxPool { window, stride, input } => Layer::MaxPool {
            window: window.clone(),
            stride: stride.clone(),
            input: shift(*input, offset, input_becomes),
        },
        Layer::Dense { name, units, input } => Layer::Dense {
            name: name.clone(),
            units: *units,
            input: shift(*input, offset, input_becomes),
        },
        Layer::Relu { input } => Layer::Relu { input: shift(*input, offset, input_becomes) },
        Layer::Softmax { input } => Layer::Softmax { input: shift(*input, offset, input_becomes) },
        Layer::Add { lhs, rhs } => Layer::Add {
            lhs: shift(*lhs, offset, input_becomes),
            rhs: shift(*rhs, offset, input_becomes),
        },
        Layer::Concat { inputs } => Layer::Concat {
            inputs: inputs.iter().map(|s| shift(*s, offset, input_becomes)).collect(),
        },
        Layer::TileSlice { tile, input } => Layer::TileSlice {
            tile: *tile,
            input: shift(*input, offset, input_becomes),
        },
        Layer::TileStack { input } => Layer::TileStack { input: shift(*input, offset, input_becomes) },
    }
}

/// Overwrite the graph's zero-allocated parameters with supplied values,
/// checking names and shapes.
fn install_params(graph: &mut NetworkGraph, values: ParamSet) -> Result<()> {
    for (name, tensor) in values {
        match graph.params.get_mut(&name) {
            Some(slot) if slot.shape() == tensor.shape() => *slot = tensor,
            Some(slot) => {
                return Err(Error::Contract(format!(
                    "parameter `{name}` shape {:?} does not match graph slot {:?}",
                    tensor.shape(),
                    slot.shape()
                )))
            }
            None => return Err(Error::Contract(format!("parameter `{name}` has no slot in graph"))),
        }
    }
    Ok(())
}

/// Where one sub-network parameter lands inside a global parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockKind {
    /// Conv weight `[out, in, k...]`: rows `out`, input-channel columns `inn`.
    ConvBlock { out: Range<usize>, inn: Range<usize> },
    /// Hidden dense weight `[f, u]`: input rows and output columns.
    DenseBlock { inn: Range<usize>, out: Range<usize> },
    /// Bias slice.
    BiasSlice { out: Range<usize> },
    /// Classifier weight `[f, K]`: input rows, all K columns.
    ClassifierRows { inn: Range<usize> },
    /// Classifier bias: summed over sub-networks.
    ClassifierBiasSum,
}

/// One copy instruction: sub-network parameter -> global parameter block.
#[derive(Debug, Clone)]
pub struct BlockCopy {
    pub global_param: String,
    pub subnet: usize,
    pub subnet_param: String,
    pub kind: BlockKind,
}

/// Structural record of a channel decomposition: the stacked global graph
/// skeleton and the block-diagonal placement of every sub-parameter.
#[derive(Debug, Clone)]
pub struct ReassemblyMap {
    pub plan: Decomposition,
    pub n: usize,
    pub num_classes: usize,
    pub global_layers: Vec<Layer>,
    pub global_input_shape: Vec<usize>,
    /// Subnet layer index i corresponds to global layer i + 1 (the tile
    /// stacking router occupies slot 0).
    pub layer_offset: usize,
    pub blocks: Vec<BlockCopy>,
}

/// Result of [`channel_decompose`]: the N sub-networks and the map that
/// reassembles them.
#[derive(Debug, Clone)]
pub struct ChannelDecomposition {
    pub subnets: Vec<NetworkGraph>,
    pub map: ReassemblyMap,
}

/// Split a global CNN along the channel dimension into N sub-networks, one
/// per tile of `plan`. Each sub-network owns channel group i of every layer
/// and operates on tile i. Requires every convolution width and hidden dense
/// width to be divisible by N and a uniform tile plan.
pub fn channel_decompose(global: &NetworkGraph, plan: &Decomposition, seed: u64) -> Result<ChannelDecomposition> {
    let n = plan.tile_count();
    if n == 0 {
        return Err(Error::Contract("plan has no tiles".into()));
    }
    if !plan.uniform() {
        return Err(Error::Contract(
            "channel decomposition requires uniform tiles; the grid must divide the image".into(),
        ));
    }
    if global.input_shape != plan.global_shape() {
        return Err(Error::Contract(format!(
            "global input {:?} does not match plan {:?}",
            global.input_shape,
            plan.global_shape()
        )));
    }
    let classifier = terminal_dense(&global.layers)
        .ok_or_else(|| Error::Contract("global graph has no dense classifier".into()))?;
    for (i, layer) in global.layers.iter().enumerate() {
        match layer {
            Layer::Conv { spec, .. } => {
                if spec.out_channels % n != 0 {
                    return Err(Error::Contract(format!(
                        "conv width {} of layer {} not divisible by N = {n}",
                        spec.out_channels,
                        layer.label(i)
                    )));
                }
            }
            Layer::Dense { units, .. } if i != classifier => {
                if units % n != 0 {
                    return Err(Error::Contract(format!(
                        "dense width {units} of layer {} not divisible by N = {n}",
                        layer.label(i)
                    )));
                }
            }
            Layer::TileSlice { .. } | Layer::TileStack { .. } | Layer::Concat { .. } => {
                return Err(Error::Contract(format!(
                    "cannot channel-decompose a graph containing {} layers",
                    layer.kind()
                )))
            }
            _ => {}
        }
    }

    let tile_shape = plan.tile_shape(0);
    let subnets: Vec<NetworkGraph> = (0..n)
        .map(|i| scale_local(global, n, &tile_shape, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;

    // Stacked global skeleton: tile router in slot 0, every layer shifted by
    // one, convolutions reading the input widened to channels * N.
    let mut global_layers: Vec<Layer> = Vec::with_capacity(global.layers.len() + 1);
    global_layers.push(Layer::TileStack { input: Src::Input });
    let stack_node = Src::Layer(0);
    for layer in &global.layers {
        let mut remapped = remap_layer(layer, 1, stack_node);
        if let (Layer::Conv { input: Src::Input, .. }, Layer::Conv { spec, .. }) = (layer, &mut remapped) {
            *spec = ConvSpec {
                kernel: spec.kernel.clone(),
                in_channels: spec.in_channels * n,
                out_channels: spec.out_channels,
                stride: spec.stride.clone(),
                padding: spec.padding,
            };
        }
        global_layers.push(remapped);
    }

    // Feature widths of the dense layers need both graphs' inferred shapes.
    let stacked_probe = NetworkGraph::new(
        global_layers.clone(),
        plan.global_shape(),
        global.num_classes,
        Some(plan.clone()),
    )?;
    let sub_shapes = subnets[0].infer_shapes()?;
    let stacked_shapes = stacked_probe.infer_shapes()?;

    let mut blocks = Vec::new();
    for (i, layer) in global.layers.iter().enumerate() {
        match layer {
            Layer::Conv { name, spec, input } => {
                let out_s = spec.out_channels / n;
                let in_g = match input {
                    Src::Input => spec.in_channels * n,
                    _ => spec.in_channels,
                };
                let in_s = in_g / n;
                for s in 0..n {
                    blocks.push(BlockCopy {
                        global_param: format!("{name}/weight"),
                        subnet: s,
                        subnet_param: format!("{name}/weight"),
                        kind: BlockKind::ConvBlock {
                            out: s * out_s..(s + 1) * out_s,
                            inn: s * in_s..(s + 1) * in_s,
                        },
                    });
                    blocks.push(BlockCopy {
                        global_param: format!("{name}/bias"),
                        subnet: s,
                        subnet_param: format!("{name}/bias"),
                        kind: BlockKind::BiasSlice { out: s * out_s..(s + 1) * out_s },
                    });
                }
            }
            Layer::Dense { name, units, input } => {
                let f_sub: usize = match input {
                    Src::Input => subnets[0].input_shape.iter().product(),
                    Src::Layer(j) => sub_shapes[*j].iter().product(),
                };
                let f_glob: usize = match input {
                    Src::Input => unreachable!("dense cannot read the image directly in a CNN"),
                    Src::Layer(j) => stacked_shapes[*j + 1].iter().product(),
                };
                if f_glob != n * f_sub {
                    return Err(Error::Contract(format!(
                        "dense layer {} feature widths do not decompose: global {f_glob}, {n} x {f_sub}",
                        layer.label(i)
                    )));
                }
                if i == classifier {
                    for s in 0..n {
                        blocks.push(BlockCopy {
                            global_param: format!("{name}/weight"),
                            subnet: s,
                            subnet_param: format!("{name}/weight"),
                            kind: BlockKind::ClassifierRows { inn: s * f_sub..(s + 1) * f_sub },
                        });
                        blocks.push(BlockCopy {
                            global_param: format!("{name}/bias"),
                            subnet: s,
                            subnet_param: format!("{name}/bias"),
                            kind: BlockKind::ClassifierBiasSum,
                        });
                    }
                } else {
                    let u_s = units / n;
                    for s in 0..n {
                        blocks.push(BlockCopy {
                            global_param: format!("{name}/weight"),
                            subnet: s,
                            subnet_param: format!("{name}/weight"),
                            kind: BlockKind::DenseBlock {
                                inn: s * f_sub..(s + 1) * f_sub,
                                out: s * u_s..(s + 1) * u_s,
                            },
                        });
                        blocks.push(BlockCopy {
                            global_param: format!("{name}/bias"),
                            subnet: s,
                            subnet_param: format!("{name}/bias"),
                            kind: BlockKind::BiasSlice { out: s * u_s..(s + 1) * u_s },
                        });
                    }
                }
            }
            _ => {}
        }
    }

    Ok(ChannelDecomposition {
        subnets,
        map: ReassemblyMap {
            plan: plan.clone(),
            n,
            num_classes: global.num_classes,
            global_layers,
            global_input_shape: plan.global_shape(),
            layer_offset: 1,
            blocks,
        },
    })
}

/// Rebuild the global CNN from trained sub-networks: block-diagonal entries
/// are copied from the sub-networks, every cross-group weight is zero, and
/// the classifier bias is the sum of the sub-network biases.
pub fn assemble_dd_global(subnets: &[NetworkGraph], map: &ReassemblyMap) -> Result<NetworkGraph> {
    if subnets.len() != map.n {
        return Err(Error::Contract(format!(
            "{} subnets for a map of {}",
            subnets.len(),
            map.n
        )));
    }
    let mut graph = NetworkGraph::new(
        map.global_layers.clone(),
        map.global_input_shape.clone(),
        map.num_classes,
        Some(map.plan.clone()),
    )?;
    for copy in &map.blocks {
        let sub = subnets
            .get(copy.subnet)
            .ok_or_else(|| Error::Contract(format!("subnet {} missing", copy.subnet)))?;
        let src = sub
            .params
            .get(&copy.subnet_param)
            .ok_or_else(|| Error::Contract(format!("subnet parameter `{}` missing", copy.subnet_param)))?;
        let dst = graph
            .params
            .get_mut(&copy.global_param)
            .ok_or_else(|| Error::Contract(format!("global parameter `{}` missing", copy.global_param)))?;
        apply_block(dst, src, &copy.kind)?;
    }
    Ok(graph)
}

fn apply_block(dst: &mut Tensor, src: &Tensor, kind: &BlockKind) -> Result<()> {
    let mismatch = |what: &str| Error::Contract(format!("reassembly block does not fit: {what}"));
    match kind {
        BlockKind::ConvBlock { out, inn } => {
            let (og, ig) = (dst.shape()[0], dst.shape()[1]);
            let (os, is_) = (src.shape()[0], src.shape()[1]);
            let k: usize = dst.shape()[2..].iter().product();
            if src.shape()[2..] != dst.shape()[2..]
                || out.len() != os
                || inn.len() != is_
                || out.end > og
                || inn.end > ig
            {
                return Err(mismatch("conv block"));
            }
            for o in 0..os {
                for c in 0..is_ {
                    let s_off = (o * is_ + c) * k;
                    let d_off = ((out.start + o) * ig + inn.start + c) * k;
                    for t in 0..k {
                        let v = src.data()[s_off + t];
                        dst.store(d_off + t, v);
                    }
                }
            }
        }
        BlockKind::DenseBlock { inn, out } => {
            let (fg, ug) = (dst.shape()[0], dst.shape()[1]);
            let (fs, us) = (src.shape()[0], src.shape()[1]);
            if inn.len() != fs || out.len() != us || inn.end > fg || out.end > ug {
                return Err(mismatch("dense block"));
            }
            for f in 0..fs {
                for u in 0..us {
                    let v = src.at2(f, u);
                    dst.store((inn.start + f) * ug + out.start + u, v);
                }
            }
        }
        BlockKind::BiasSlice { out } => {
            if out.len() != src.len() || out.end > dst.len() {
                return Err(mismatch("bias slice"));
            }
            for (i, &v) in src.data().iter().enumerate() {
                dst.store(out.start + i, v);
            }
        }
        BlockKind::ClassifierRows { inn } => {
            let (fg, kg) = (dst.shape()[0], dst.shape()[1]);
            let (fs, ks) = (src.shape()[0], src.shape()[1]);
            if ks != kg || inn.len() != fs || inn.end > fg {
                return Err(mismatch("classifier rows"));
            }
            for f in 0..fs {
                for c in 0..ks {
                    let v = src.at2(f, c);
                    dst.store((inn.start + f) * kg + c, v);
                }
            }
        }
        BlockKind::ClassifierBiasSum => {
            if src.len() != dst.len() {
                return Err(mismatch("classifier bias"));
            }
            for (i, &v) in src.data().iter().enumerate() {
                let cur = dst.data()[i];
                dst.store(i, cur + v);
            }
        }
    }
    Ok(())
}
