//! Sectioned key=value run configuration.
//!
//! ```text
//! [data]
//! synthetic = tile-separable
//! count = 2000
//! shape = 32x32
//! classes = 4
//!
//! [train]
//! pipeline = lda-dnn
//! ```
//!
//! Sections: [data], [model], [decomposition], [train], [lda]. Unknown
//! sections or keys are rejected with their line number. `#` starts a
//! comment line.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use ddclass_core::data::{SyntheticKind, SyntheticSpec};
use ddclass_core::pipeline::{DataSource, ModelKind, PipelineKind, RunConfig};

fn parse_dims(value: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = value
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|_| anyhow!("bad dimension `{p}`")))
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.iter().any(|&d| d == 0) {
        bail!("dimensions must be positive");
    }
    Ok(dims)
}

fn dims_to_string(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Parse a configuration file into a fully validated [`RunConfig`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut section = String::new();

    let mut dataset: Option<PathBuf> = None;
    let mut synthetic_kind: Option<SyntheticKind> = None;
    let mut count: Option<usize> = None;
    let mut shape: Option<Vec<usize>> = None;
    let mut channels = 1usize;
    let mut classes: Option<usize> = None;
    let mut gen_seed = 0u64;
    let mut pipeline: Option<PipelineKind> = None;

    // Everything else lands directly in the config defaults.
    let mut config = RunConfig::new(
        PipelineKind::GlobalCnn,
        DataSource::Directory(PathBuf::new()),
    );

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at = |msg: String| anyhow!("line {}: {msg}", lineno + 1);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !["data", "model", "decomposition", "train", "lda"].contains(&name) {
                return Err(at(format!("unknown section `[{name}]`")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| at(format!("bad value `{value}` for `{key}`: {what}"));

        macro_rules! parse_as {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|e| bad(&e.to_string()))?
            };
        }

        match (section.as_str(), key) {
            ("data", "dataset") => dataset = Some(PathBuf::from(value)),
            ("data", "synthetic") => {
                synthetic_kind = Some(SyntheticKind::parse(value).map_err(|e| at(e.to_string()))?)
            }
            ("data", "count") => count = Some(parse_as!(usize)),
            ("data", "shape") => shape = Some(parse_dims(value).map_err(|e| at(e.to_string()))?),
            ("data", "channels") => channels = parse_as!(usize),
            ("data", "classes") => classes = Some(parse_as!(usize)),
            ("data", "gen_seed") => gen_seed = parse_as!(u64),
            ("data", "split_ratio") => config.split_ratio = parse_as!(f64),
            ("model", "model") => {
                config.model = ModelKind::parse(value).map_err(|e| at(e.to_string()))?
            }
            ("model", "width") => config.width = parse_as!(usize),
            ("decomposition", "grid") => {
                config.grid = parse_dims(value).map_err(|e| at(e.to_string()))?
            }
            ("decomposition", "delta") => config.delta = parse_as!(usize),
            ("train", "pipeline") => {
                pipeline = Some(PipelineKind::parse(value).map_err(|e| at(e.to_string()))?)
            }
            ("train", "epochs_local") => config.epochs_local = parse_as!(usize),
            ("train", "epochs_global") => config.epochs_global = parse_as!(usize),
            ("train", "epochs_baseline") => config.epochs_baseline = parse_as!(usize),
            ("train", "batch") => config.batch_size = parse_as!(usize),
            ("train", "seed") => config.seed = parse_as!(u64),
            ("train", "workers") => config.workers = parse_as!(usize),
            ("lda", "d") => config.discriminants = Some(parse_as!(usize)),
            ("lda", "gamma") => config.gamma = parse_as!(f64),
            ("", _) => return Err(at(format!("key `{key}` appears before any section"))),
            (s, k) => return Err(at(format!("unknown key `{k}` in section `[{s}]`"))),
        }
    }

    config.pipeline =
        pipeline.ok_or_else(|| anyhow!("missing required key `pipeline` in section [train]"))?;
    config.data = match (dataset, synthetic_kind) {
        (Some(_), Some(_)) => bail!("[data] must set either `dataset` or `synthetic`, not both"),
        (Some(dir), None) => DataSource::Directory(dir),
        (None, Some(kind)) => {
            let spatial = shape.ok_or_else(|| anyhow!("[data] synthetic needs `shape`"))?;
            DataSource::Synthetic(SyntheticSpec {
                kind,
                count: count.ok_or_else(|| anyhow!("[data] synthetic needs `count`"))?,
                spatial,
                channels,
                classes: classes.ok_or_else(|| anyhow!("[data] synthetic needs `classes`"))?,
                seed: gen_seed,
            })
        }
        (None, None) => bail!("[data] must set `dataset` or `synthetic`"),
    };
    config.validate().context("invalid configuration")?;
    Ok(config)
}

/// Canonical text form; `parse_config(serialize_config(c)) == c`.
pub fn serialize_config(config: &RunConfig) -> String {
    let mut out = String::from("[data]\n");
    match &config.data {
        DataSource::Directory(dir) => out.push_str(&format!("dataset = {}\n", dir.display())),
        DataSource::Synthetic(spec) => {
            out.push_str(&format!("synthetic = {}\n", spec.kind.name()));
            out.push_str(&format!("count = {}\n", spec.count));
            out.push_str(&format!("shape = {}\n", dims_to_string(&spec.spatial)));
            out.push_str(&format!("channels = {}\n", spec.channels));
            out.push_str(&format!("classes = {}\n", spec.classes));
            out.push_str(&format!("gen_seed = {}\n", spec.seed));
        }
    }
    out.push_str(&format!("split_ratio = {}\n", config.split_ratio));
    out.push_str("\n[model]\n");
    out.push_str(&format!("model = {}\n", config.model.name()));
    out.push_str(&format!("width = {}\n", config.width));
    out.push_str("\n[decomposition]\n");
    out.push_str(&format!("grid = {}\n", dims_to_string(&config.grid)));
    out.push_str(&format!("delta = {}\n", config.delta));
    out.push_str("\n[train]\n");
    out.push_str(&format!("pipeline = {}\n", config.pipeline.name()));
    out.push_str(&format!("epochs_local = {}\n", config.epochs_local));
    out.push_str(&format!("epochs_global = {}\n", config.epochs_global));
    out.push_str(&format!("epochs_baseline = {}\n", config.epochs_baseline));
    out.push_str(&format!("batch = {}\n", config.batch_size));
    out.push_str(&format!("seed = {}\n", config.seed));
    out.push_str(&format!("workers = {}\n", config.workers));
    out.push_str("\n[lda]\n");
    if let Some(d) = config.discriminants {
        out.push_str(&format!("d = {d}\n"));
    }
    out.push_str(&format!("gamma = {}\n", config.gamma));
    out
}
