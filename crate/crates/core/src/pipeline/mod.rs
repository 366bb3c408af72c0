//! The five experiment pipelines: global CNN baseline, coherent CNN-DNN
//! with transfer learning, channel-decomposed CNN with transfer learning,
//! global LDA, and local-LDA + DNN aggregation. Each run produces a
//! [`RunReport`] with per-epoch metrics and per-phase wall times.

mod train;

pub use train::{argmax_row, eval_graph, parallel_map, train_supervised, EpochMetric};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, split_train_val, LabeledDataset, SyntheticSpec};
use crate::decomp::{extract_tile_batch, plan_grid, Decomposition};
use crate::error::{Error, Result};
use crate::lda::{fit_lda, DatasetView, LdaModel, DEFAULT_GAMMA};
use crate::nn::AdamState;
use crate::tensor::Tensor;
use crate::zoo::{
    assemble_cnn_dnn, assemble_dd_global, build_dnn_head, build_resnet20, build_vgg9,
    channel_decompose, scale_local, NetworkGraph, ParamSet,
};

/// Seed offset for the aggregation head's initialization.
const HEAD_SEED: u64 = 0x6865_6164;
/// Seed offset for the global fine-tuning phase's shuffling.
const TRANSFER_SEED: u64 = 0x7472_616e;

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PipelineKind {
    GlobalCnn,
    CnnDnnTransfer,
    DdCnnTransfer,
    GlobalLda,
    LdaDnn,
}

impl PipelineKind {
    pub fn parse(s: &str) -> Result<PipelineKind> {
        match s {
            "global-cnn" => Ok(PipelineKind::GlobalCnn),
            "cnn-dnn-transfer" => Ok(PipelineKind::CnnDnnTransfer),
            "dd-cnn-transfer" => Ok(PipelineKind::DdCnnTransfer),
            "global-lda" => Ok(PipelineKind::GlobalLda),
            "lda-dnn" => Ok(PipelineKind::LdaDnn),
            other => Err(Error::Contract(format!(
                "unknown pipeline `{other}` (expected global-cnn, cnn-dnn-transfer, dd-cnn-transfer, global-lda, lda-dnn)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PipelineKind::GlobalCnn => "global-cnn",
            PipelineKind::CnnDnnTransfer => "cnn-dnn-transfer",
            PipelineKind::DdCnnTransfer => "dd-cnn-transfer",
            PipelineKind::GlobalLda => "global-lda",
            PipelineKind::LdaDnn => "lda-dnn",
        }
    }

    /// Canonical column order of the comparison report.
    pub fn all() -> [PipelineKind; 5] {
        [
            PipelineKind::GlobalCnn,
            PipelineKind::CnnDnnTransfer,
            PipelineKind::DdCnnTransfer,
            PipelineKind::GlobalLda,
            PipelineKind::LdaDnn,
        ]
    }
}

/// CNN architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Vgg9,
    Resnet20,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<ModelKind> {
        match s {
            "vgg9" => Ok(ModelKind::Vgg9),
            "resnet20" => Ok(ModelKind::Resnet20),
            other => Err(Error::Contract(format!("unknown model `{other}` (expected vgg9 or resnet20)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Vgg9 => "vgg9",
            ModelKind::Resnet20 => "resnet20",
        }
    }
}

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A directory with images.dten / labels.dten / meta.txt.
    Directory(PathBuf),
    /// Generated on the fly.
    Synthetic(SyntheticSpec),
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineKind,
    pub data: DataSource,
    pub split_ratio: f64,
    pub model: ModelKind,
    pub width: usize,
    pub grid: Vec<usize>,
    pub delta: usize,
    /// LDA discriminant count; defaults to min(2, K-1) when unset.
    pub discriminants: Option<usize>,
    pub gamma: f64,
    pub epochs_local: usize,
    pub epochs_global: usize,
    pub epochs_baseline: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub workers: usize,
}

impl RunConfig {
    /// Defaults for everything except the pipeline and data source:
    /// 150 local + 50 global = 200 baseline epochs, batch 32, 80/20 split.
    pub fn new(pipeline: PipelineKind, data: DataSource) -> RunConfig {
        RunConfig {
            pipeline,
            data,
            split_ratio: 0.8,
            model: ModelKind::Vgg9,
            width: 16,
            grid: vec![2, 2],
            delta: 0,
            discriminants: None,
            gamma: DEFAULT_GAMMA,
            epochs_local: 150,
            epochs_global: 50,
            epochs_baseline: 200,
            batch_size: 32,
            seed: 0,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.split_ratio && self.split_ratio < 1.0) {
            return Err(Error::Contract(format!("split ratio {} outside (0, 1)", self.split_ratio)));
        }
        if self.batch_size == 0 || self.workers == 0 || self.width == 0 {
            return Err(Error::Contract("batch size, workers, and width must be >= 1".into()));
        }
        if self.grid.is_empty() || self.grid.len() > 3 || self.grid.iter().any(|&g| g == 0) {
            return Err(Error::Contract(format!("bad grid {:?}", self.grid)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Contract("gamma must be >= 0".into()));
        }
        Ok(())
    }

    /// The comparison-fairness rule: transfer pipelines spend the same
    /// total epoch budget as the monolithic baseline.
    pub fn fair_budget(&self) -> bool {
        self.epochs_local + self.epochs_global == self.epochs_baseline
    }

    fn resolve_discriminants(&self, classes: usize) -> usize {
        self.discriminants.unwrap_or_else(|| 2.min(classes.saturating_sub(1)).max(1))
    }
}

/// Wall time of one pipeline phase. `seconds_max` is the parallel wall
/// time (max over workers); `seconds_sum` the sequential-equivalent total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTime {
    pub phase: String,
    pub seconds_max: f64,
    pub seconds_sum: f64,
}

fn ms(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}

/// Everything a pipeline run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pipeline: String,
    pub dataset_id: String,
    pub model: String,
    pub grid: Vec<usize>,
    pub seed: u64,
    pub fair_budget: bool,
    pub epochs: Vec<EpochMetric>,
    pub final_train_accuracy: f64,
    pub final_val_accuracy: f64,
    pub phase_times: Vec<PhaseTime>,
    pub parameter_counts: BTreeMap<String, usize>,
    pub artifact: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record")]
enum ReportLine {
    #[serde(rename = "epoch")]
    Epoch(EpochMetric),
    #[serde(rename = "summary")]
    Summary(Box<RunReport>),
}

impl RunReport {
    /// Line-delimited records: one per epoch, then one summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&ReportLine::Epoch(e.clone())).expect("serializable"));
            out.push('\n');
        }
        let mut summary = self.clone();
        summary.epochs.clear();
        out.push_str(&serde_json::to_string(&ReportLine::Summary(Box::new(summary))).expect("serializable"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<RunReport> {
        let mut epochs = Vec::new();
        let mut summary: Option<RunReport> = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReportLine = serde_json::from_str(line).map_err(|e| {
                Error::Contract(format!("bad report record on line {}: {e}", lineno + 1))
            })?;
            match parsed {
                ReportLine::Epoch(e) => epochs.push(e),
                ReportLine::Summary(s) => summary = Some(*s),
            }
        }
        let mut report = summary.ok_or_else(|| Error::Contract("report has no summary record".into()))?;
        report.epochs = epochs;
        Ok(report)
    }
}

/// The trained artifact of a pipeline run.
#[derive(Debug, Clone)]
pub enum FittedModel {
    /// A network graph with trained parameters installed.
    Graph { graph: NetworkGraph },
    GlobalLda { model: LdaModel },
    LdaDnn {
        models: Vec<LdaModel>,
        head: NetworkGraph,
        plan: Decomposition,
    },
}

/// A finished run: the report plus the model it produced.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: RunReport,
    pub model: FittedModel,
}

/// Classification accuracy (argmax, ties toward the lowest class index)
/// and mean cross-entropy of a fitted model over a dataset.
pub fn evaluate(model: &FittedModel, data: &LabeledDataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation over an empty dataset".into()));
    }
    match model {
        FittedModel::Graph { graph } => eval_graph(graph, &graph.params, data, batch_size),
        FittedModel::GlobalLda { model } => {
            let rows = flatten_rows(&data.images)?;
            let mut correct = 0usize;
            let mut loss = 0.0f64;
            let z = model.project_batch(&rows)?;
            for (i, &label) in data.labels.iter().enumerate() {
                let probs = model.predict_proba_projected(
                    &z.data()[i * model.discriminants()..(i + 1) * model.discriminants()],
                );
                if argmax_row(&probs) == label as usize {
                    correct += 1;
                }
                loss -= probs[label as usize].max(f64::MIN_POSITIVE).ln();
            }
            Ok((correct as f64 / data.len() as f64, loss / data.len() as f64))
        }
        FittedModel::LdaDnn { models, head, plan } => {
            let features = lda_feature_dataset(models, plan, data)?;
            eval_graph(head, &head.params, &features, batch_size)
        }
    }
}

/// Flatten `[n, ...]` images into `[n, f]` feature rows.
pub fn flatten_rows(images: &Tensor) -> Result<Tensor> {
    let n = images.shape()[0];
    let f: usize = images.shape()[1..].iter().product();
    images.reshape(vec![n, f])
}

/// Concatenate the per-tile LDA probability vectors of every sample into
/// the K*N feature rows the aggregation head consumes (plan tile order).
pub fn lda_feature_dataset(
    models: &[LdaModel],
    plan: &Decomposition,
    data: &LabeledDataset,
) -> Result<LabeledDataset> {
    let n = data.len();
    let k = data.class_count;
    let tiles = plan.tile_count();
    if models.len() != tiles {
        return Err(Error::Contract(format!("{} LDA models for {tiles} tiles", models.len())));
    }
    let mut features = Tensor::zeros(vec![n, k * tiles]);
    for (t, model) in models.iter().enumerate() {
        let tile = extract_tile_batch(&data.images, plan, t)?;
        let rows = flatten_rows(&tile)?;
        let z = model.project_batch(&rows)?;
        let d = model.discriminants();
        for i in 0..n {
            let probs = model.predict_proba_projected(&z.data()[i * d..(i + 1) * d]);
            if probs.len() != k {
                return Err(Error::Contract(format!(
                    "tile {t} model emits {} classes, dataset has {k}",
                    probs.len()
                )));
            }
            for (j, &p) in probs.iter().enumerate() {
                features.set2(i, t * k + j, p);
            }
        }
    }
    LabeledDataset::new(features, data.labels.clone(), k, &data.split, data.provenance.clone())
}

fn load_data(config: &RunConfig) -> Result<LabeledDataset> {
    match &config.data {
        DataSource::Directory(dir) => LabeledDataset::load_dir(dir),
        DataSource::Synthetic(spec) => gen_synthetic(spec),
    }
}

fn build_global(config: &RunConfig, input_shape: &[usize], k: usize, seed: u64) -> Result<NetworkGraph> {
    match config.model {
        ModelKind::Vgg9 => build_vgg9(input_shape, k, config.width, seed),
        ModelKind::Resnet20 => build_resnet20(input_shape, k, config.width, seed),
    }
}

/// Build the untrained model skeleton a pipeline would produce, so saved
/// parameters can be re-installed for evaluation.
pub fn build_pipeline_model(config: &RunConfig, sample_shape: &[usize], k: usize) -> Result<FittedModel> {
    match config.pipeline {
        PipelineKind::GlobalCnn => Ok(FittedModel::Graph {
            graph: build_global(config, sample_shape, k, config.seed)?,
        }),
        PipelineKind::CnnDnnTransfer => {
            let plan = plan_grid(sample_shape, &config.grid, config.delta)?;
            let global = build_global(config, sample_shape, k, config.seed)?;
            let locals: Vec<NetworkGraph> = (0..plan.tile_count())
                .map(|i| {
                    scale_local(
                        &global,
                        plan.tile_count(),
                        &plan.tile_shape(i),
                        config.seed.wrapping_add(i as u64),
                    )
                })
                .collect::<Result<_>>()?;
            let head = build_dnn_head(k, plan.tile_count(), config.seed.wrapping_add(HEAD_SEED))?;
            Ok(FittedModel::Graph { graph: assemble_cnn_dnn(&locals, &head, &plan)? })
        }
        PipelineKind::DdCnnTransfer => {
            let plan = plan_grid(sample_shape, &config.grid, config.delta)?;
            let global = build_global(config, sample_shape, k, config.seed)?;
            let dec = channel_decompose(&global, &plan, config.seed)?;
            Ok(FittedModel::Graph { graph: assemble_dd_global(&dec.subnets, &dec.map)? })
        }
        PipelineKind::GlobalLda | PipelineKind::LdaDnn => Err(Error::Contract(
            "LDA models are rebuilt from their checkpoint tensors, not from the graph builders".into(),
        )),
    }
}

/// Reconstruct a fitted model from checkpoint tensors, for evaluation.
pub fn load_pipeline_model(
    config: &RunConfig,
    sample_shape: &[usize],
    k: usize,
    params: &ParamSet,
) -> Result<FittedModel> {
    let mut model = match config.pipeline {
        PipelineKind::GlobalLda => FittedModel::GlobalLda { model: LdaModel::from_params(params, "lda/")? },
        PipelineKind::LdaDnn => {
            let plan = plan_grid(sample_shape, &config.grid, config.delta)?;
            let n = plan.tile_count();
            let models = (0..n)
                .map(|i| LdaModel::from_params(params, &format!("lda{i}/")))
                .collect::<Result<_>>()?;
            let head = build_dnn_head(k, n, config.seed.wrapping_add(HEAD_SEED))?;
            FittedModel::LdaDnn { models, head, plan }
        }
        _ => build_pipeline_model(config, sample_shape, k)?,
    };
    model.install_params(params)?;
    Ok(model)
}

struct PhaseClock {
    times: Vec<PhaseTime>,
}

impl PhaseClock {
    fn new() -> PhaseClock {
        PhaseClock { times: Vec::new() }
    }

    fn single(&mut self, phase: &str, seconds: f64) {
        self.times.push(PhaseTime {
            phase: phase.to_string(),
            seconds_max: ms(seconds),
            seconds_sum: ms(seconds),
        });
    }

    fn parallel(&mut self, phase: &str, worker_seconds: &[f64]) {
        let max = worker_seconds.iter().cloned().fold(0.0, f64::max);
        let sum = worker_seconds.iter().sum();
        self.times.push(PhaseTime {
            phase: phase.to_string(),
            seconds_max: ms(max),
            seconds_sum: ms(sum),
        });
    }
}

fn tile_dataset(plan: &Decomposition, tile: usize, data: &LabeledDataset) -> Result<LabeledDataset> {
    let images = extract_tile_batch(&data.images, plan, tile)?;
    LabeledDataset::new(
        images,
        data.labels.clone(),
        data.class_count,
        &data.split,
        data.provenance.clone(),
    )
}

/// Execute the configured pipeline end to end.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let phase = |name: &'static str| move |e: Error| e.in_phase(name);

    let t = Instant::now();
    let full = load_data(config).map_err(phase("data"))?;
    let k = full.class_count;
    let (train, val) = split_train_val(&full, config.split_ratio, config.seed).map_err(phase("data"))?;
    let mut clock = PhaseClock::new();
    clock.single("data", t.elapsed().as_secs_f64());
    log::info!(
        "pipeline {} on {} ({} train / {} val, K = {k})",
        config.pipeline.name(),
        full.dataset_id(),
        train.len(),
        val.len()
    );

    let mut epochs: Vec<EpochMetric> = Vec::new();
    let mut parameter_counts = BTreeMap::new();

    let model = match config.pipeline {
        PipelineKind::GlobalCnn => {
            let mut graph =
                build_global(config, train.sample_shape(), k, config.seed).map_err(phase("baseline"))?;
            parameter_counts.insert("global".into(), graph.parameter_count());
            let t = Instant::now();
            let mut opt = AdamState::default();
            let (params, metrics) = train_supervised(
                &graph,
                &train,
                &val,
                config.epochs_baseline,
                &mut opt,
                config.seed,
                config.batch_size,
                "baseline",
            )
            .map_err(phase("baseline"))?;
            clock.single("baseline", t.elapsed().as_secs_f64());
            epochs.extend(metrics);
            graph.params = params;
            FittedModel::Graph { graph }
        }

        PipelineKind::CnnDnnTransfer => {
            let plan = plan_grid(train.sample_shape(), &config.grid, config.delta).map_err(phase("plan"))?;
            let n = plan.tile_count();
            let global =
                build_global(config, train.sample_shape(), k, config.seed).map_err(phase("plan"))?;
            parameter_counts.insert("global".into(), global.parameter_count());

            let mut locals: Vec<NetworkGraph> = (0..n)
                .map(|i| {
                    scale_local(&global, n, &plan.tile_shape(i), config.seed.wrapping_add(i as u64))
                })
                .collect::<Result<_>>()
                .map_err(phase("plan"))?;
            parameter_counts.insert(
                "locals-total".into(),
                locals.iter().map(NetworkGraph::parameter_count).sum(),
            );

            let jobs: Vec<(usize, NetworkGraph)> = locals.iter().cloned().enumerate().collect();
            let (results, worker_times) = parallel_map(jobs, config.workers, |_, (i, local)| {
                let tr = tile_dataset(&plan, i, &train)?;
                let va = tile_dataset(&plan, i, &val)?;
                let mut opt = AdamState::default();
                train_supervised(
                    &local,
                    &tr,
                    &va,
                    config.epochs_local,
                    &mut opt,
                    config.seed.wrapping_add(i as u64),
                    config.batch_size,
                    &format!("local{i}"),
                )
            });
            clock.parallel("local", &worker_times);
            for (i, result) in results.into_iter().enumerate() {
                let (params, metrics) = result.map_err(phase("local"))?;
                locals[i].params = params;
                epochs.extend(metrics);
            }

            let head =
                build_dnn_head(k, n, config.seed.wrapping_add(HEAD_SEED)).map_err(phase("transfer"))?;
            parameter_counts.insert("head".into(), head.parameter_count());
            let mut coherent = assemble_cnn_dnn(&locals, &head, &plan).map_err(phase("transfer"))?;
            parameter_counts.insert("coherent".into(), coherent.parameter_count());

            let t = Instant::now();
            let mut opt = AdamState::default();
            let (params, metrics) = train_supervised(
                &coherent,
                &train,
                &val,
                config.epochs_global,
                &mut opt,
                config.seed.wrapping_add(TRANSFER_SEED),
                config.batch_size,
                "transfer",
            )
            .map_err(phase("transfer"))?;
            clock.single("transfer", t.elapsed().as_secs_f64());
            epochs.extend(metrics);
            coherent.params = params;
            FittedModel::Graph { graph: coherent }
        }

        PipelineKind::DdCnnTransfer => {
            let plan = plan_grid(train.sample_shape(), &config.grid, config.delta).map_err(phase("plan"))?;
            let global =
                build_global(config, train.sample_shape(), k, config.seed).map_err(phase("plan"))?;
            parameter_counts.insert("global".into(), global.parameter_count());
            let mut dec = channel_decompose(&global, &plan, config.seed).map_err(phase("plan"))?;
            parameter_counts.insert(
                "subnets-total".into(),
                dec.subnets.iter().map(NetworkGraph::parameter_count).sum(),
            );

            let jobs: Vec<(usize, NetworkGraph)> = dec.subnets.iter().cloned().enumerate().collect();
            let (results, worker_times) = parallel_map(jobs, config.workers, |_, (i, subnet)| {
                let tr = tile_dataset(&plan, i, &train)?;
                let va = tile_dataset(&plan, i, &val)?;
                let mut opt = AdamState::default();
                train_supervised(
                    &subnet,
                    &tr,
                    &va,
                    config.epochs_local,
                    &mut opt,
                    config.seed.wrapping_add(i as u64),
                    config.batch_size,
                    &format!("local{i}"),
                )
            });
            clock.parallel("local", &worker_times);
            for (i, result) in results.into_iter().enumerate() {
                let (params, metrics) = result.map_err(phase("local"))?;
                dec.subnets[i].params = params;
                epochs.extend(metrics);
            }

            let mut assembled = assemble_dd_global(&dec.subnets, &dec.map).map_err(phase("transfer"))?;
            parameter_counts.insert("assembled-global".into(), assembled.parameter_count());
            let t = Instant::now();
            let mut opt = AdamState::default();
            let (params, metrics) = train_supervised(
                &assembled,
                &train,
                &val,
                config.epochs_global,
                &mut opt,
                config.seed.wrapping_add(TRANSFER_SEED),
                config.batch_size,
                "transfer",
            )
            .map_err(phase("transfer"))?;
            clock.single("transfer", t.elapsed().as_secs_f64());
            epochs.extend(metrics);
            assembled.params = params;
            FittedModel::Graph { graph: assembled }
        }

        PipelineKind::GlobalLda => {
            let d = config.resolve_discriminants(k);
            let t = Instant::now();
            let rows = flatten_rows(&train.images).map_err(phase("fit"))?;
            let view = DatasetView::from_rows(&rows, train.labels.clone(), k).map_err(phase("fit"))?;
            let model = fit_lda(&view, d, config.gamma).map_err(phase("fit"))?;
            clock.single("fit", t.elapsed().as_secs_f64());
            parameter_counts.insert("projection".into(), model.projection.len() + model.centroids.len());
            FittedModel::GlobalLda { model }
        }

        PipelineKind::LdaDnn => {
            let plan = plan_grid(train.sample_shape(), &config.grid, config.delta).map_err(phase("plan"))?;
            let n = plan.tile_count();
            let d = config.resolve_discriminants(k);

            let jobs: Vec<usize> = (0..n).collect();
            let (results, worker_times) = parallel_map(jobs, config.workers, |_, i| {
                let tr = tile_dataset(&plan, i, &train)?;
                let rows = flatten_rows(&tr.images)?;
                let view = DatasetView::from_rows(&rows, tr.labels.clone(), k)?;
                fit_lda(&view, d, config.gamma)
            });
            clock.parallel("local", &worker_times);
            let models: Vec<LdaModel> = results
                .into_iter()
                .collect::<Result<_>>()
                .map_err(phase("local"))?;

            let t = Instant::now();
            let head_train = lda_feature_dataset(&models, &plan, &train).map_err(phase("features"))?;
            let head_val = lda_feature_dataset(&models, &plan, &val).map_err(phase("features"))?;
            clock.single("features", t.elapsed().as_secs_f64());

            let mut head =
                build_dnn_head(k, n, config.seed.wrapping_add(HEAD_SEED)).map_err(phase("head"))?;
            parameter_counts.insert("head".into(), head.parameter_count());
            let t = Instant::now();
            let mut opt = AdamState::default();
            let (params, metrics) = train_supervised(
                &head,
                &head_train,
                &head_val,
                config.epochs_baseline,
                &mut opt,
                config.seed.wrapping_add(TRANSFER_SEED),
                config.batch_size,
                "head",
            )
            .map_err(phase("head"))?;
            clock.single("head", t.elapsed().as_secs_f64());
            epochs.extend(metrics);
            head.params = params;
            FittedModel::LdaDnn { models, head, plan }
        }
    };

    let t = Instant::now();
    let (final_train_accuracy, _) = evaluate(&model, &train, config.batch_size).map_err(phase("eval"))?;
    let (final_val_accuracy, _) = evaluate(&model, &val, config.batch_size).map_err(phase("eval"))?;
    clock.single("eval", t.elapsed().as_secs_f64());
    log::info!(
        "{}: train accuracy {:.4}, validation accuracy {:.4}",
        config.pipeline.name(),
        final_train_accuracy,
        final_val_accuracy
    );

    let report = RunReport {
        pipeline: config.pipeline.name().to_string(),
        dataset_id: full.dataset_id(),
        model: config.model.name().to_string(),
        grid: config.grid.clone(),
        seed: config.seed,
        fair_budget: config.fair_budget(),
        epochs,
        final_train_accuracy,
        final_val_accuracy,
        phase_times: clock.times,
        parameter_counts,
        artifact: None,
    };
    Ok(PipelineOutcome { report, model })
}

impl FittedModel {
    /// Flatten the trained model into named tensors for a DPRM checkpoint.
    pub fn to_params(&self) -> ParamSet {
        match self {
            FittedModel::Graph { graph } => graph.params.clone(),
            FittedModel::GlobalLda { model } => model.to_params("lda/").into_iter().collect(),
            FittedModel::LdaDnn { models, head, .. } => {
                let mut out = ParamSet::new();
                for (i, m) in models.iter().enumerate() {
                    out.extend(m.to_params(&format!("lda{i}/")));
                }
                for (name, t) in &head.params {
                    out.insert(format!("head/{name}"), t.clone());
                }
                out
            }
        }
    }

    /// Install checkpoint tensors produced by [`FittedModel::to_params`].
    pub fn install_params(&mut self, values: &ParamSet) -> Result<()> {
        match self {
            FittedModel::Graph { graph } => {
                for (name, slot) in graph.params.iter_mut() {
                    let t = values
                        .get(name)
                        .ok_or_else(|| Error::Contract(format!("checkpoint missing `{name}`")))?;
                    if t.shape() != slot.shape() {
                        return Err(Error::Contract(format!(
                            "checkpoint `{name}` shape {:?} does not match model {:?}",
                            t.shape(),
                            slot.shape()
                        )));
                    }
                    *slot = t.clone();
                }
                Ok(())
            }
            FittedModel::GlobalLda { model } => {
                *model = LdaModel::from_params(values, "lda/")?;
                Ok(())
            }
            FittedModel::LdaDnn { models, head, .. } => {
                for (i, m) in models.iter_mut().enumerate() {
                    *m = LdaModel::from_params(values, &format!("lda{i}/"))?;
                }
                for (name, slot) in head.params.iter_mut() {
                    let key = format!("head/{name}");
                    let t = values
                        .get(&key)
                        .ok_or_else(|| Error::Contract(format!("checkpoint missing `{key}`")))?;
                    *slot = t.clone();
                }
                Ok(())
            }
        }
    }
}
