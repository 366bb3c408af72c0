//! The network graph: an ordered layer DAG plus named parameter tensors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decomp::Decomposition;
use crate::error::{Error, Result};
use crate::nn::ConvSpec;
use crate::tensor::Tensor;

/// Named parameter tensors. BTreeMap keeps iteration deterministic.
pub type ParamSet = BTreeMap<String, Tensor>;

/// Where a layer reads its input from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    /// The graph input tensor.
    Input,
    /// Output of an earlier layer.
    Layer(usize),
}

/// One layer of the DAG. Layers are ordered; a layer may only reference
/// earlier layers or the graph input.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv { name: String, spec: ConvSpec, input: Src },
    MaxPool { window: Vec<usize>, stride: Vec<usize>, input: Src },
    /// Affine layer; inputs of rank > 1 are flattened row-wise.
    Dense { name: String, units: usize, input: Src },
    Relu { input: Src },
    Softmax { input: Src },
    Add { lhs: Src, rhs: Src },
    /// Feature-axis concatenation of rank-1 (per-sample) inputs.
    Concat { inputs: Vec<Src> },
    /// Copy one tile of the graph input, per the graph's plan.
    TileSlice { tile: usize, input: Src },
    /// Stack all tiles of the graph input along the channel axis.
    TileStack { input: Src },
}

impl Layer {
    pub fn inputs(&self) -> Vec<Src> {
        match self {
            Layer::Conv { input, .. }
            | Layer::MaxPool { input, .. }
            | Layer::Dense { input, .. }
            | Layer::Relu { input }
            | Layer::Softmax { input }
            | Layer::TileSlice { input, .. }
            | Layer::TileStack { input } => vec![*input],
            Layer::Add { lhs, rhs } => vec![*lhs, *rhs],
            Layer::Concat { inputs } => inputs.clone(),
        }
    }

    /// Human-readable layer label for error messages.
    pub fn label(&self, index: usize) -> String {
        match self {
            Layer::Conv { name, .. } | Layer::Dense { name, .. } => name.clone(),
            Layer::MaxPool { .. } => format!("pool@{index}"),
            Layer::Relu { .. } => format!("relu@{index}"),
            Layer::Softmax { .. } => format!("softmax@{index}"),
            Layer::Add { .. } => format!("add@{index}"),
            Layer::Concat { .. } => format!("concat@{index}"),
            Layer::TileSlice { tile, .. } => format!("tile{tile}@{index}"),
            Layer::TileStack { .. } => format!("tilestack@{index}"),
        }
    }

    /// Kind tag, used to compare structural identity of two graphs.
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::MaxPool { .. } => "pool",
            Layer::Dense { .. } => "dense",
            Layer::Relu { .. } => "relu",
            Layer::Softmax { .. } => "softmax",
            Layer::Add { .. } => "add",
            Layer::Concat { .. } => "concat",
            Layer::TileSlice { .. } => "tileslice",
            Layer::TileStack { .. } => "tilestack",
        }
    }
}

/// A layer DAG with named parameters, an input shape (batch excluded) and a
/// terminal softmax classifier of size `num_classes`.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    pub layers: Vec<Layer>,
    /// Per-sample input shape: `[channels, spatial...]` or `[features]`.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub params: ParamSet,
    /// Tile plan backing TileSlice/TileStack layers.
    pub plan: Option<Decomposition>,
    /// Named layer indices recorded by assemblers (branch outputs etc.).
    pub marks: BTreeMap<String, usize>,
}

impl NetworkGraph {
    /// Build a graph, infer and validate all shapes, and allocate zeroed
    /// parameters. Call [`NetworkGraph::randomize`] to initialize weights.
    pub fn new(
        layers: Vec<Layer>,
        input_shape: Vec<usize>,
        num_classes: usize,
        plan: Option<Decomposition>,
    ) -> Result<NetworkGraph> {
        let mut graph = NetworkGraph {
            layers,
            input_shape,
            num_classes,
            params: BTreeMap::new(),
            plan,
            marks: BTreeMap::new(),
        };
        let shapes = graph.infer_shapes()?;
        match shapes.last() {
            Some(last) if matches!(graph.layers.last(), Some(Layer::Softmax { .. })) => {
                if last != &vec![num_classes] {
                    return Err(Error::Contract(format!(
                        "terminal output shape {last:?} does not match {num_classes} classes"
                    )));
                }
            }
            _ => {
                return Err(Error::Contract(
                    "graph must terminate in a softmax classifier".into(),
                ))
            }
        }
        graph.allocate_params(&shapes)?;
        Ok(graph)
    }

    /// Per-layer output shapes, batch dimension excluded.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            for src in layer.inputs() {
                if let Src::Layer(j) = src {
                    if j >= i {
                        return Err(Error::Contract(format!(
                            "layer {} references layer {j}, which is not earlier",
                            layer.label(i)
                        )));
                    }
                }
            }
            let resolve = |src: Src| -> Vec<usize> {
                match src {
                    Src::Input => self.input_shape.clone(),
                    Src::Layer(j) => shapes[j].clone(),
                }
            };
            let shape = self
                .layer_output_shape(layer, &resolve)
                .map_err(|e| match e {
                    Error::Shape(detail) => Error::LayerShape { layer: layer.label(i), detail },
                    other => other,
                })?;
            shapes.push(shape);
        }
        Ok(shapes)
    }

    fn layer_output_shape(&self, layer: &Layer, resolve: &dyn Fn(Src) -> Vec<usize>) -> Result<Vec<usize>> {
        Ok(match layer {
            Layer::Conv { spec, input, .. } => {
                let s = resolve(*input);
                if s.len() != spec.rank() + 1 {
                    return Err(Error::Shape(format!(
                        "conv rank {} fed with shape {s:?}",
                        spec.rank()
                    )));
                }
                if s[0] != spec.in_channels {
                    return Err(Error::Shape(format!(
                        "{} input channels, spec expects {}",
                        s[0], spec.in_channels
                    )));
                }
                let out = spec.out_extents(&s[1..])?;
                let mut shape = vec![spec.out_channels];
                shape.extend(out);
                shape
            }
            Layer::MaxPool { window, stride, input } => {
                let s = resolve(*input);
                if s.len() != window.len() + 1 {
                    return Err(Error::Shape(format!("pool rank mismatch on shape {s:?}")));
                }
                let mut shape = vec![s[0]];
                for d in 0..window.len() {
                    if window[d] > s[d + 1] {
                        return Err(Error::Shape(format!(
                            "pool window {} exceeds extent {}",
                            window[d],
                            s[d + 1]
                        )));
                    }
                    shape.push((s[d + 1] - window[d]) / stride[d] + 1);
                }
                shape
            }
            Layer::Dense { units, input, .. } => {
                let s = resolve(*input);
                if s.iter().product::<usize>() == 0 || *units == 0 {
                    return Err(Error::Shape("dense over empty feature space".into()));
                }
                vec![*units]
            }
            Layer::Relu { input } => resolve(*input).to_vec(),
            Layer::Softmax { input } => {
                let s = resolve(*input);
                if s.len() != 1 {
                    return Err(Error::Shape(format!("softmax expects a flat vector, got {s:?}")));
                }
                s.to_vec()
            }
            Layer::Add { lhs, rhs } => {
                let a = resolve(*lhs);
                let b = resolve(*rhs);
                if a != b {
                    return Err(Error::Shape(format!("add over mismatched shapes {a:?} vs {b:?}")));
                }
                a.to_vec()
            }
            Layer::Concat { inputs } => {
                let mut total = 0usize;
                for &src in inputs {
                    let s = resolve(src);
                    if s.len() != 1 {
                        return Err(Error::Shape(format!("concat expects flat vectors, got {s:?}")));
                    }
                    total += s[0];
                }
                vec![total]
            }
            Layer::TileSlice { tile, input } => {
                let plan = self.plan.as_ref().ok_or_else(|| {
                    Error::Contract("tile slice layer requires a decomposition plan".into())
                })?;
                let s = resolve(*input);
                if s != plan.global_shape().as_slice() {
                    return Err(Error::Shape(format!(
                        "tile slice input {s:?} does not match plan {:?}",
                        plan.global_shape()
                    )));
                }
                if *tile >= plan.tile_count() {
                    return Err(Error::Shape(format!("tile index {tile} out of range")));
                }
                plan.tile_shape(*tile)
            }
            Layer::TileStack { input } => {
                let plan = self.plan.as_ref().ok_or_else(|| {
                    Error::Contract("tile stack layer requires a decomposition plan".into())
                })?;
                if !plan.uniform() {
                    return Err(Error::Shape("tile stack requires uniform tiles".into()));
                }
                let s = resolve(*input);
                if s != plan.global_shape().as_slice() {
                    return Err(Error::Shape(format!(
                        "tile stack input {s:?} does not match plan {:?}",
                        plan.global_shape()
                    )));
                }
                let mut shape = vec![plan.channels * plan.tile_count()];
                shape.extend_from_slice(&plan.tiles[0].extents);
                shape
            }
        })
    }

    fn allocate_params(&mut self, shapes: &[Vec<usize>]) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let (name, wshape, bshape) = match layer {
                Layer::Conv { name, spec, .. } => {
                    (name, spec.weight_shape(), vec![spec.out_channels])
                }
                Layer::Dense { name, units, input } => {
                    let f: usize = match input {
                        Src::Input => self.input_shape.iter().product(),
                        Src::Layer(j) => shapes[*j].iter().product(),
                    };
                    (name, vec![f, *units], vec![*units])
                }
                _ => continue,
            };
            for (suffix, shape) in [("weight", wshape), ("bias", bshape)] {
                let key = format!("{name}/{suffix}");
                if self
                    .params
                    .insert(key.clone(), Tensor::zeros(shape))
                    .is_some()
                {
                    return Err(Error::Contract(format!(
                        "duplicate parameter name `{key}` (layer {})",
                        layer.label(i)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Deterministic uniform Glorot initialization of every weight;
    /// biases stay zero.
    pub fn randomize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Vec<String> = self.params.keys().cloned().collect();
        for key in keys {
            if !key.ends_with("/weight") {
                continue;
            }
            let t = self.params.get_mut(&key).expect("key exists");
            let shape = t.shape().to_vec();
            let (fan_in, fan_out) = match shape.len() {
                2 => (shape[0], shape[1]),
                _ => {
                    let k: usize = shape[2..].iter().product();
                    (shape[1] * k, shape[0] * k)
                }
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for i in 0..t.len() {
                let v = rng.gen_range(-limit..limit);
                t.store(i, v);
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Index of the last layer (the softmax classifier).
    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    /// Prefix every parameter name (and layer references to them).
    pub fn with_param_prefix(mut self, prefix: &str) -> NetworkGraph {
        let mut renamed = BTreeMap::new();
        for (k, v) in std::mem::take(&mut self.params) {
            renamed.insert(format!("{prefix}{k}"), v);
        }
        self.params = renamed;
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { name, .. } | Layer::Dense { name, .. } => {
                    *name = format!("{prefix}{name}");
                }
                _ => {}
            }
        }
        self
    }
}
