//! Deterministic synthetic dataset generators for desk-scale experiments.
//!
//! All generators emit pixel values in [0, 1] and are pure functions of
//! their parameters and seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::LabeledDataset;

/// Supported generator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticKind {
    /// Well-separated Gaussian class blobs over all pixels.
    GaussianClasses,
    /// Class signal confined to the top-left quadrant, plus shared
    /// correlated background components and white noise everywhere.
    TileSeparable,
    /// Two texture classes: horizontal stripes vs a checkerboard.
    StripedVsChecker,
    /// Rank-3 volumes with a class-dependent blob location.
    VolumetricBlob,
}

impl SyntheticKind {
    pub fn parse(s: &str) -> Result<SyntheticKind> {
        match s {
            "gaussian-classes" => Ok(SyntheticKind::GaussianClasses),
            "tile-separable" => Ok(SyntheticKind::TileSeparable),
            "striped-vs-checker" => Ok(SyntheticKind::StripedVsChecker),
            "volumetric-blob" => Ok(SyntheticKind::VolumetricBlob),
            other => Err(Error::Contract(format!(
                "unknown synthetic kind `{other}` (expected gaussian-classes, tile-separable, striped-vs-checker, volumetric-blob)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::GaussianClasses => "gaussian-classes",
            SyntheticKind::TileSeparable => "tile-separable",
            SyntheticKind::StripedVsChecker => "striped-vs-checker",
            SyntheticKind::VolumetricBlob => "volumetric-blob",
        }
    }
}

/// Generative parameters; stored alongside the dataset as provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub count: usize,
    pub spatial: Vec<usize>,
    pub channels: usize,
    pub classes: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Stable identifier used to match reports of the same dataset.
    pub fn id(&self) -> String {
        format!(
            "synthetic:{}:{}x{:?}c{}k{}s{}",
            self.kind.name(),
            self.count,
            self.spatial,
            self.channels,
            self.classes,
            self.seed
        )
    }
}

/// Generate a synthetic labeled dataset.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    if spec.count == 0 || spec.classes == 0 || spec.channels == 0 {
        return Err(Error::Contract("count, classes, and channels must be >= 1".into()));
    }
    match spec.kind {
        SyntheticKind::GaussianClasses => gaussian_classes(spec),
        SyntheticKind::TileSeparable => tile_separable(spec),
        SyntheticKind::StripedVsChecker => striped_vs_checker(spec),
        SyntheticKind::VolumetricBlob => volumetric_blob(spec),
    }
}

fn image_elems(spec: &SyntheticSpec) -> usize {
    spec.channels * spec.spatial.iter().product::<usize>()
}

fn finish(spec: &SyntheticSpec, data: Vec<f64>, labels: Vec<u32>) -> Result<LabeledDataset> {
    let mut shape = vec![spec.count, spec.channels];
    shape.extend_from_slice(&spec.spatial);
    let images = Tensor::from_vec(shape, data)?;
    LabeledDataset::new(images, labels, spec.classes, "full", Some(spec.clone()))
}

fn round_robin_labels(spec: &SyntheticSpec) -> Vec<u32> {
    (0..spec.count).map(|i| (i % spec.classes) as u32).collect()
}

fn gaussian_classes(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    const SEPARATION: f64 = 0.25;
    const NOISE: f64 = 0.05;
    let m = image_elems(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..m).map(|_| 0.5 + SEPARATION * rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let labels = round_robin_labels(spec);
    let mut data = vec![0.0f64; spec.count * m];
    for (i, &label) in labels.iter().enumerate() {
        let mean = &means[label as usize];
        for f in 0..m {
            data[i * m + f] = (mean[f] + NOISE * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0);
        }
    }
    finish(spec, data, labels)
}

fn tile_separable(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    const SIGNAL: f64 = 0.22;
    const BACKGROUND: f64 = 0.12;
    const BACKGROUND_COMPONENTS: usize = 24;
    const NOISE: f64 = 0.05;
    if spec.spatial.len() != 2 {
        return Err(Error::Contract("tile-separable generates 2D images".into()));
    }
    let (h, w) = (spec.spatial[0], spec.spatial[1]);
    let (qh, qw) = (h.div_ceil(2), w.div_ceil(2));
    let m = image_elems(spec);
    let sp = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Per-class signal pattern in the top-left quadrant (all channels).
    let patterns: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.channels * qh * qw).map(|_| SIGNAL * rng.gen_range(-1.0..1.0)).collect())
        .collect();
    // Shared background components spanning the whole image.
    let background: Vec<Vec<f64>> = (0..BACKGROUND_COMPONENTS)
        .map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let labels = round_robin_labels(spec);
    let mut data = vec![0.0f64; spec.count * m];
    for (i, &label) in labels.iter().enumerate() {
        let base = i * m;
        for f in 0..m {
            data[base + f] = 0.5;
        }
        // Signal in the quadrant.
        let pat = &patterns[label as usize];
        for c in 0..spec.channels {
            for y in 0..qh {
                for x in 0..qw {
                    data[base + c * sp + y * w + x] += pat[(c * qh + y) * qw + x];
                }
            }
        }
        // Correlated background with per-sample coefficients.
        for comp in &background {
            let coeff = BACKGROUND * rng.gen_range(-1.0..1.0);
            for f in 0..m {
                data[base + f] += coeff * comp[f] / (BACKGROUND_COMPONENTS as f64).sqrt();
            }
        }
        for f in 0..m {
            data[base + f] = (data[base + f] + NOISE * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0);
        }
    }
    finish(spec, data, labels)
}

fn striped_vs_checker(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    const AMPLITUDE: f64 = 0.25;
    const NOISE: f64 = 0.05;
    const PERIOD: f64 = 4.0;
    if spec.classes != 2 {
        return Err(Error::Contract("striped-vs-checker is a two-class task".into()));
    }
    if spec.spatial.len() != 2 {
        return Err(Error::Contract("striped-vs-checker generates 2D images".into()));
    }
    let (h, w) = (spec.spatial[0], spec.spatial[1]);
    let sp = h * w;
    let m = image_elems(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = round_robin_labels(spec);
    let mut data = vec![0.0f64; spec.count * m];
    let tau = std::f64::consts::TAU;
    for (i, &label) in labels.iter().enumerate() {
        let base = i * m;
        let phase_y: f64 = rng.gen_range(0.0..PERIOD);
        let phase_x: f64 = rng.gen_range(0.0..PERIOD);
        for c in 0..spec.channels {
            for y in 0..h {
                for x in 0..w {
                    let texture = if label == 0 {
                        (tau * (y as f64 + phase_y) / PERIOD).sin()
                    } else {
                        (tau * (y as f64 + phase_y) / PERIOD).sin()
                            * (tau * (x as f64 + phase_x) / PERIOD).sin()
                    };
                    let v = 0.5 + AMPLITUDE * texture + NOISE * rng.gen_range(-1.0..1.0);
                    data[base + c * sp + y * w + x] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    finish(spec, data, labels)
}

fn volumetric_blob(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    const AMPLITUDE: f64 = 0.4;
    const NOISE: f64 = 0.05;
    if spec.spatial.len() != 3 {
        return Err(Error::Contract("volumetric-blob generates 3D volumes".into()));
    }
    let (s0, s1, s2) = (spec.spatial[0], spec.spatial[1], spec.spatial[2]);
    let sp = s0 * s1 * s2;
    let m = image_elems(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Distinct blob centers per class.
    let centers: Vec<[f64; 3]> = (0..spec.classes)
        .map(|_| {
            [
                rng.gen_range(0.2..0.8) * s0 as f64,
                rng.gen_range(0.2..0.8) * s1 as f64,
                rng.gen_range(0.2..0.8) * s2 as f64,
            ]
        })
        .collect();
    let radius = 0.18 * (s0.min(s1).min(s2)) as f64;

    let labels = round_robin_labels(spec);
    let mut data = vec![0.0f64; spec.count * m];
    for (i, &label) in labels.iter().enumerate() {
        let base = i * m;
        let c0 = centers[label as usize];
        let jitter = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        for ch in 0..spec.channels {
            for a in 0..s0 {
                for b in 0..s1 {
                    for d in 0..s2 {
                        let dz = [
                            a as f64 - (c0[0] + jitter[0]),
                            b as f64 - (c0[1] + jitter[1]),
                            d as f64 - (c0[2] + jitter[2]),
                        ];
                        let dist2 = dz.iter().map(|v| v * v).sum::<f64>();
                        let bump = AMPLITUDE * (-dist2 / (2.0 * radius * radius)).exp();
                        let v = 0.3 + bump + NOISE * rng.gen_range(-1.0..1.0);
                        data[base + ch * sp + (a * s1 + b) * s2 + d] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    finish(spec, data, labels)
}
