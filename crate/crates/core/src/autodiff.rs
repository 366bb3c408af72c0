//! Reverse-mode differentiation over a recorded computation tape.
//!
//! `forward` walks a [`NetworkGraph`] layer by layer, recording one tape
//! node per layer; `forward_with_loss` appends a fused softmax cross-entropy
//! node over the classifier logits. `backward` replays the tape in reverse
//! and returns gradients for every parameter that influenced the loss.

use std::collections::BTreeMap;

use crate::decomp::{extract_tile_batch, stack_tiles_batch};
use crate::error::{Error, Result};
use crate::nn::{
    conv_backward, conv_forward, dense_backward, dense_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward, softmax_backward, softmax_cross_entropy,
    softmax_cross_entropy_backward, softmax_forward, ConvSpec,
};
use crate::tensor::{Precision, Tensor};
use crate::zoo::{Layer, NetworkGraph, ParamSet, Src};

/// Parameter name -> gradient tensor (same shape as the parameter).
pub type GradientMap = BTreeMap<String, Tensor>;

/// What a tape node recorded, including whatever backward needs.
#[derive(Debug, Clone)]
pub enum Recorded {
    /// The graph input.
    Input,
    Conv { name: String, spec: ConvSpec },
    MaxPool { input_shape: Vec<usize>, argmax: Vec<u32> },
    Dense { name: String },
    Relu,
    Softmax,
    Add,
    Concat { widths: Vec<usize> },
    TileSlice,
    TileStack,
    /// Fused mean cross-entropy over the classifier logits.
    Loss { labels: Vec<u32>, probs: Tensor },
    /// Elementwise square; a test primitive for scalar tapes.
    Square,
    /// Sum of all entries to a scalar; a test primitive.
    SumAll,
}

/// One recorded differentiable node.
#[derive(Debug, Clone)]
pub struct TapeNode {
    pub op: Recorded,
    /// Tape ids of the inputs (strictly smaller than this node's id).
    pub inputs: Vec<usize>,
    pub output: Tensor,
    /// Whether any parameter sits below this node; nodes without one are
    /// skipped during backward.
    pub needs_grad: bool,
}

/// The recorded forward computation; node 0 is the graph input.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pub nodes: Vec<TapeNode>,
}

impl Tape {
    /// Output of graph layer `layer` (tape node `layer + 1`).
    pub fn layer_output(&self, layer: usize) -> &Tensor {
        &self.nodes[layer + 1].output
    }

    pub fn push(&mut self, op: Recorded, inputs: Vec<usize>, output: Tensor, needs_grad: bool) -> usize {
        self.nodes.push(TapeNode { op, inputs, output, needs_grad });
        self.nodes.len() - 1
    }

    fn last_id(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Run the graph on a batched input `[batch, input_shape...]`, recording
/// every layer on the tape. Returns the terminal output (probabilities).
pub fn forward(graph: &NetworkGraph, input: &Tensor, params: &ParamSet) -> Result<(Tensor, Tape)> {
    let tape = record(graph, input, params)?;
    Ok((tape.nodes[tape.last_id()].output.clone(), tape))
}

/// Run the graph and append the fused cross-entropy loss over the logits
/// feeding the terminal softmax. Returns (loss, probabilities, tape); the
/// tape terminates in the scalar loss node.
pub fn forward_with_loss(
    graph: &NetworkGraph,
    input: &Tensor,
    labels: &[u32],
    params: &ParamSet,
) -> Result<(f64, Tensor, Tape)> {
    let mut tape = record(graph, input, params)?;
    let softmax_layer = graph.output_layer();
    let logits_node = match &graph.layers[softmax_layer] {
        Layer::Softmax { input } => src_node(*input),
        _ => return Err(Error::Contract("graph must terminate in softmax".into())),
    };
    let probs = tape.nodes[softmax_layer + 1].output.clone();
    let logits = &tape.nodes[logits_node].output;
    let (loss, loss_probs) = softmax_cross_entropy(logits, labels)?;
    let needs = tape.nodes[logits_node].needs_grad;
    let out = Tensor::with_precision(vec![1], vec![loss], Precision::Double)?;
    tape.push(
        Recorded::Loss { labels: labels.to_vec(), probs: loss_probs },
        vec![logits_node],
        out,
        needs,
    );
    Ok((loss, probs, tape))
}

fn src_node(src: Src) -> usize {
    match src {
        Src::Input => 0,
        Src::Layer(j) => j + 1,
    }
}

fn get_param<'p>(params: &'p ParamSet, name: &str, suffix: &str) -> Result<&'p Tensor> {
    params
        .get(&format!("{name}/{suffix}"))
        .ok_or_else(|| Error::Contract(format!("missing parameter `{name}/{suffix}`")))
}

fn record(graph: &NetworkGraph, input: &Tensor, params: &ParamSet) -> Result<Tape> {
    if input.rank() < 2 || &input.shape()[1..] != graph.input_shape.as_slice() {
        return Err(Error::Shape(format!(
            "graph input must be [batch, {:?}], got {:?}",
            graph.input_shape,
            input.shape()
        )));
    }
    let batch = input.shape()[0];
    let mut tape = Tape::default();
    tape.push(Recorded::Input, vec![], input.clone(), false);

    for (i, layer) in graph.layers.iter().enumerate() {
        let with_layer = |e: Error| match e {
            Error::Shape(detail) => Error::LayerShape { layer: layer.label(i), detail },
            other => other,
        };
        let in_ids: Vec<usize> = layer.inputs().iter().map(|&s| src_node(s)).collect();
        let inherited = in_ids.iter().any(|&id| tape.nodes[id].needs_grad);
        let (op, output, needs_grad) = match layer {
            Layer::Conv { name, spec, input } => {
                let x = &tape.nodes[src_node(*input)].output;
                let w = get_param(params, name, "weight")?;
                let b = get_param(params, name, "bias")?;
                let y = conv_forward(x, spec, w, b).map_err(with_layer)?;
                (Recorded::Conv { name: name.clone(), spec: spec.clone() }, y, true)
            }
            Layer::MaxPool { window, stride, input } => {
                let x = &tape.nodes[src_node(*input)].output;
                let (y, argmax) = maxpool_forward(x, window, stride).map_err(with_layer)?;
                (
                    Recorded::MaxPool { input_shape: x.shape().to_vec(), argmax },
                    y,
                    inherited,
                )
            }
            Layer::Dense { name, input, .. } => {
                let x = &tape.nodes[src_node(*input)].output;
                let flat = flatten_batch(x)?;
                let w = get_param(params, name, "weight")?;
                let b = get_param(params, name, "bias")?;
                let y = dense_forward(&flat, w, b).map_err(with_layer)?;
                (Recorded::Dense { name: name.clone() }, y, true)
            }
            Layer::Relu { input } => {
                let x = &tape.nodes[src_node(*input)].output;
                (Recorded::Relu, relu_forward(x), inherited)
            }
            Layer::Softmax { input } => {
                let x = &tape.nodes[src_node(*input)].output;
                (Recorded::Softmax, softmax_forward(x).map_err(with_layer)?, inherited)
            }
            Layer::Add { lhs, rhs } => {
                let a = &tape.nodes[src_node(*lhs)].output;
                let b = &tape.nodes[src_node(*rhs)].output;
                if a.shape() != b.shape() {
                    return Err(with_layer(Error::Shape(format!(
                        "add over {:?} vs {:?}",
                        a.shape(),
                        b.shape()
                    ))));
                }
                let p = a.precision().join(b.precision());
                let data = a.data().iter().zip(b.data()).map(|(x, y)| p.store(x + y)).collect();
                (Recorded::Add, Tensor::with_precision(a.shape().to_vec(), data, p)?, inherited)
            }
            Layer::Concat { inputs } => {
                let parts: Vec<&Tensor> = inputs.iter().map(|&s| &tape.nodes[src_node(s)].output).collect();
                let widths: Vec<usize> = parts.iter().map(|t| t.shape()[1]).collect();
                let mut p = Precision::Single;
                for t in &parts {
                    p = p.join(t.precision());
                }
                let total: usize = widths.iter().sum();
                let mut out = Tensor::zeros_with(vec![batch, total], p);
                {
                    let od = out.data_mut();
                    for row in 0..batch {
                        let mut off = 0usize;
                        for (t, &wd) in parts.iter().zip(&widths) {
                            od[row * total + off..row * total + off + wd]
                                .copy_from_slice(&t.data()[row * wd..(row + 1) * wd]);
                            off += wd;
                        }
                    }
                }
                (Recorded::Concat { widths }, out, inherited)
            }
            Layer::TileSlice { tile, input } => {
                let plan = graph.plan.as_ref().ok_or_else(|| {
                    Error::Contract("tile slice layer requires a decomposition plan".into())
                })?;
                let x = &tape.nodes[src_node(*input)].output;
                let y = extract_tile_batch(x, plan, *tile).map_err(with_layer)?;
                (Recorded::TileSlice, y, inherited)
            }
            Layer::TileStack { input } => {
                let plan = graph.plan.as_ref().ok_or_else(|| {
                    Error::Contract("tile stack layer requires a decomposition plan".into())
                })?;
                let x = &tape.nodes[src_node(*input)].output;
                let y = stack_tiles_batch(x, plan).map_err(with_layer)?;
                (Recorded::TileStack, y, inherited)
            }
        };
        tape.push(op, in_ids, output, needs_grad);
    }
    Ok(tape)
}

fn flatten_batch(x: &Tensor) -> Result<Tensor> {
    if x.rank() == 2 {
        return Ok(x.clone());
    }
    let batch = x.shape()[0];
    let f: usize = x.shape()[1..].iter().product();
    x.reshape(vec![batch, f])
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(cur) => {
            debug_assert_eq!(cur.shape(), g.shape());
            let p = cur.precision().join(g.precision());
            let data: Vec<f64> = cur
                .data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| p.store(a + b))
                .collect();
            *cur = Tensor::with_precision(cur.shape().to_vec(), data, p).expect("same shape");
        }
    }
}

fn add_param_grad(grads: &mut GradientMap, name: String, g: Tensor) {
    match grads.get_mut(&name) {
        None => {
            grads.insert(name, g);
        }
        Some(cur) => {
            let p = cur.precision().join(g.precision());
            let data: Vec<f64> = cur
                .data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| p.store(a + b))
                .collect();
            *cur = Tensor::with_precision(cur.shape().to_vec(), data, p).expect("same shape");
        }
    }
}

/// Walk the tape in reverse from its scalar terminal node, seeded with
/// `loss_seed`, and return gradients for every parameter. Non-parameter
/// leaves (the input, tile routers over it) are skipped.
pub fn backward(tape: &Tape, params: &ParamSet, loss_seed: f64) -> Result<GradientMap> {
    let last = tape.last_id();
    if tape.nodes[last].output.len() != 1 {
        return Err(Error::Contract(format!(
            "backward requires a scalar terminal node, got shape {:?}",
            tape.nodes[last].output.shape()
        )));
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; tape.nodes.len()];
    grads[last] = Some(Tensor::with_precision(vec![1], vec![loss_seed], Precision::Double)?);
    let mut out = GradientMap::new();

    for id in (0..=last).rev() {
        let Some(g) = grads[id].take() else { continue };
        if !tape.nodes[id].needs_grad && !matches!(tape.nodes[id].op, Recorded::Input) {
            continue;
        }
        let node = &tape.nodes[id];
        match &node.op {
            Recorded::Input => {}
            Recorded::Loss { labels, probs } => {
                let seed = g.data()[0];
                let d_logits = softmax_cross_entropy_backward(probs, labels, seed)?;
                accumulate(&mut grads[node.inputs[0]], d_logits);
            }
            Recorded::Conv { name, spec } => {
                let x = &tape.nodes[node.inputs[0]].output;
                let w = get_param(params, name, "weight")?;
                let need_input = tape.nodes[node.inputs[0]].needs_grad;
                let cg = conv_backward(x, spec, w, &g, need_input)?;
                add_param_grad(&mut out, format!("{name}/weight"), cg.d_weights);
                add_param_grad(&mut out, format!("{name}/bias"), cg.d_bias);
                if let Some(dx) = cg.d_input {
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
            }
            Recorded::Dense { name } => {
                let x = &tape.nodes[node.inputs[0]].output;
                let flat = flatten_batch(x)?;
                let w = get_param(params, name, "weight")?;
                let need_input = tape.nodes[node.inputs[0]].needs_grad;
                let dg = dense_backward(&flat, w, &g, need_input)?;
                add_param_grad(&mut out, format!("{name}/weight"), dg.d_weights);
                add_param_grad(&mut out, format!("{name}/bias"), dg.d_bias);
                if let Some(dx) = dg.d_input {
                    let dx = dx.reshape(x.shape().to_vec())?;
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
            }
            Recorded::MaxPool { input_shape, argmax } => {
                if tape.nodes[node.inputs[0]].needs_grad {
                    let dx = maxpool_backward(input_shape, argmax, &g)?;
                    accumulate(&mut grads[node.inputs[0]], dx);
                }
            }
            Recorded::Relu => {
                if tape.nodes[node.inputs[0]].needs_grad {
                    let x = &tape.nodes[node.inputs[0]].output;
                    accumulate(&mut grads[node.inputs[0]], relu_backward(x, &g)?);
                }
            }
            Recorded::Softmax => {
                if tape.nodes[node.inputs[0]].needs_grad {
                    accumulate(&mut grads[node.inputs[0]], softmax_backward(&node.output, &g)?);
                }
            }
            Recorded::Add => {
                for &inp in &node.inputs {
                    if tape.nodes[inp].needs_grad {
                        accumulate(&mut grads[inp], g.clone());
                    }
                }
            }
            Recorded::Concat { widths } => {
                let batch = node.output.shape()[0];
                let total: usize = widths.iter().sum();
                let mut off = 0usize;
                for (part, &wd) in node.inputs.iter().zip(widths) {
                    if tape.nodes[*part].needs_grad {
                        let mut piece = Tensor::zeros_with(vec![batch, wd], g.precision());
                        {
                            let pd = piece.data_mut();
                            for row in 0..batch {
                                pd[row * wd..(row + 1) * wd]
                                    .copy_from_slice(&g.data()[row * total + off..row * total + off + wd]);
                            }
                        }
                        accumulate(&mut grads[*part], piece);
                    }
                    off += wd;
                }
            }
            // Tile routers sit on the raw input; nothing below them needs a
            // gradient in any graph we build.
            Recorded::TileSlice | Recorded::TileStack => {}
            Recorded::Square => {
                if tape.nodes[node.inputs[0]].needs_grad {
                    let x = &tape.nodes[node.inputs[0]].output;
                    let p = g.precision().join(x.precision());
                    let data: Vec<f64> = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(xi, gi)| p.store(2.0 * xi * gi))
                        .collect();
                    accumulate(
                        &mut grads[node.inputs[0]],
                        Tensor::with_precision(x.shape().to_vec(), data, p)?,
                    );
                }
            }
            Recorded::SumAll => {
                if tape.nodes[node.inputs[0]].needs_grad {
                    let x = &tape.nodes[node.inputs[0]].output;
                    let seed = g.data()[0];
                    accumulate(
                        &mut grads[node.inputs[0]],
                        Tensor::with_precision(x.shape().to_vec(), vec![seed; x.len()], g.precision())?,
                    );
                }
            }
        }
    }
    Ok(out)
}

/// Maximum relative error between analytic gradients and central finite
/// differences with step `h`, over up to `max_coords` coordinates of every
/// parameter (sampled at a deterministic stride when a parameter is larger).
/// Everything runs in 64-bit.
pub fn grad_check(
    graph: &NetworkGraph,
    input: &Tensor,
    labels: &[u32],
    params: &ParamSet,
    h: f64,
    max_coords: usize,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::Contract("finite-difference step must be positive".into()));
    }
    let input = input.to_precision(Precision::Double);
    let mut base: ParamSet = params
        .iter()
        .map(|(k, v)| (k.clone(), v.to_precision(Precision::Double)))
        .collect();
    let (_, _, tape) = forward_with_loss(graph, &input, labels, &base)?;
    let analytic = backward(&tape, &base, 1.0)?;
    max_rel_error_vs_fd(graph, &input, labels, &mut base, &analytic, h, max_coords)
}

/// Compare a supplied gradient map against central finite differences.
/// Split out of [`grad_check`] so tests can verify the checker itself
/// flags corrupted gradients.
pub fn max_rel_error_vs_fd(
    graph: &NetworkGraph,
    input: &Tensor,
    labels: &[u32],
    params: &mut ParamSet,
    analytic: &GradientMap,
    h: f64,
    max_coords: usize,
) -> Result<f64> {
    let names: Vec<String> = analytic.keys().cloned().collect();
    let mut worst = 0.0f64;
    for name in names {
        let len = params[&name].len();
        let stride = len.div_ceil(max_coords).max(1);
        let mut idx = 0usize;
        while idx < len {
            let orig = params[&name].data()[idx];
            params.get_mut(&name).unwrap().store(idx, orig + h);
            let (lp, _, _) = forward_with_loss(graph, input, labels, params)?;
            params.get_mut(&name).unwrap().store(idx, orig - h);
            let (lm, _, _) = forward_with_loss(graph, input, labels, params)?;
            params.get_mut(&name).unwrap().store(idx, orig);
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[&name].data()[idx];
            let rel = (a - fd).abs() / a.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
            idx += stride;
        }
    }
    Ok(worst)
}
