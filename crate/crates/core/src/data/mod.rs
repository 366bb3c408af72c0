//! Datasets, bit-exact container formats, splitting, and synthetic
//! generators.

mod container;
mod synthetic;

pub use container::{
    load_container, load_params, save_container, save_params, Payload, TensorContainer,
    DPRM_MAGIC, DTEN_MAGIC, FORMAT_VERSION,
};
pub use synthetic::{gen_synthetic, SyntheticKind, SyntheticSpec};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A labeled image set: `[n, channels, spatial...]` samples (or `[n, f]`
/// feature rows for aggregated inputs) with one label per sample.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<u32>,
    pub class_count: usize,
    /// Which split this set represents: "full", "train", or "val".
    pub split: String,
    /// Generative parameters when the set is synthetic.
    pub provenance: Option<SyntheticSpec>,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<u32>,
        class_count: usize,
        split: &str,
        provenance: Option<SyntheticSpec>,
    ) -> Result<LabeledDataset> {
        if images.rank() < 2 {
            return Err(Error::Shape(format!(
                "images must be [n, ...], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Contract(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Contract("class count must be >= 1".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= class_count) {
            return Err(Error::Contract(format!(
                "label {l} at sample {i} out of range [0, {class_count})"
            )));
        }
        Ok(LabeledDataset {
            images,
            labels,
            class_count,
            split: split.to_string(),
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape, batch dimension excluded.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Copy the selected samples into a new batch tensor.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<u32>) {
        let per: usize = self.sample_shape().iter().product();
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let mut out = Tensor::zeros_with(shape, self.images.precision());
        let mut labels = Vec::with_capacity(indices.len());
        {
            let dst = out.data_mut();
            for (row, &i) in indices.iter().enumerate() {
                dst[row * per..(row + 1) * per].copy_from_slice(&self.images.data()[i * per..(i + 1) * per]);
                labels.push(self.labels[i]);
            }
        }
        (out, labels)
    }

    /// Stable identifier used to check report compatibility.
    pub fn dataset_id(&self) -> String {
        match &self.provenance {
            Some(spec) => spec.id(),
            None => format!(
                "data:{:?}k{}n{}",
                self.sample_shape(),
                self.class_count,
                self.len()
            ),
        }
    }

    /// Write `images.dten`, `labels.dten`, and `meta.txt` into a directory.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_container(&dir.join("images.dten"), &TensorContainer::from_tensor(&self.images))?;
        save_container(&dir.join("labels.dten"), &TensorContainer::from_labels(&self.labels))?;
        let mut meta = format!("classes = {}\nsplit = {}\n", self.class_count, self.split);
        if let Some(spec) = &self.provenance {
            meta.push_str(&format!(
                "kind = {}\ncount = {}\nspatial = {:?}\nchannels = {}\nseed = {}\n",
                spec.kind.name(),
                spec.count,
                spec.spatial,
                spec.channels,
                spec.seed
            ));
        }
        std::fs::write(dir.join("meta.txt"), meta)?;
        Ok(())
    }

    /// Load a dataset directory written by [`LabeledDataset::save_dir`].
    pub fn load_dir(dir: &Path) -> Result<LabeledDataset> {
        let images = load_container(&dir.join("images.dten"))?.to_tensor()?;
        let labels = load_container(&dir.join("labels.dten"))?.to_labels()?;
        let meta = std::fs::read_to_string(dir.join("meta.txt"))?;
        let mut class_count = None;
        let mut split = "full".to_string();
        for line in meta.lines() {
            if let Some((key, value)) = line.split_once('=') {
                match key.trim() {
                    "classes" => {
                        class_count = Some(value.trim().parse::<usize>().map_err(|_| {
                            Error::Contract(format!("bad classes value `{}` in meta.txt", value.trim()))
                        })?)
                    }
                    "split" => split = value.trim().to_string(),
                    _ => {}
                }
            }
        }
        let class_count =
            class_count.ok_or_else(|| Error::Contract("meta.txt missing `classes`".into()))?;
        LabeledDataset::new(images, labels, class_count, &split, None)
    }
}

/// Deterministic stratified split: per class, a seeded shuffle followed by
/// a `ratio` cut. Per-class train counts land within +-1 of ratio * n_j.
pub fn split_train_val(dataset: &LabeledDataset, ratio: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::Contract(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count];
    for (i, &l) in dataset.labels.iter().enumerate() {
        per_class[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (class, indices) in per_class.iter_mut().enumerate() {
        if indices.is_empty() {
            return Err(Error::Contract(format!("class {class} has no samples to split")));
        }
        indices.shuffle(&mut rng);
        let take = (ratio * indices.len() as f64).round() as usize;
        if take == 0 {
            return Err(Error::Contract(format!(
                "split ratio {ratio} would leave class {class} empty in the training set"
            )));
        }
        train_idx.extend_from_slice(&indices[..take.min(indices.len())]);
        val_idx.extend_from_slice(&indices[take.min(indices.len())..]);
    }
    // Interleave classes deterministically rather than leaving them grouped.
    train_idx.shuffle(&mut rng);
    val_idx.shuffle(&mut rng);

    let (train_images, train_labels) = dataset.gather(&train_idx);
    let (val_images, val_labels) = dataset.gather(&val_idx);
    let train = LabeledDataset::new(
        train_images,
        train_labels,
        dataset.class_count,
        "train",
        dataset.provenance.clone(),
    )?;
    let val = LabeledDataset::new(
        val_images,
        val_labels,
        dataset.class_count,
        "val",
        dataset.provenance.clone(),
    )?;
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, k: usize) -> LabeledDataset {
        let images = Tensor::from_vec(vec![n, 1, 2, 2], (0..n * 4).map(|i| i as f64 * 0.01).collect()).unwrap();
        let labels = (0..n).map(|i| (i % k) as u32).collect();
        LabeledDataset::new(images, labels, k, "full", None).unwrap()
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let data = tiny(100, 4);
        let (tr, va) = split_train_val(&data, 0.8, 7).unwrap();
        assert_eq!(tr.len(), 80);
        assert_eq!(va.len(), 20);
        for k in 0..4u32 {
            let tk = tr.labels.iter().filter(|&&l| l == k).count();
            assert_eq!(tk, 20, "class {k} train count");
        }
        let (tr2, _) = split_train_val(&data, 0.8, 7).unwrap();
        assert_eq!(tr.labels, tr2.labels);
        assert_eq!(tr.images.data(), tr2.images.data());
        let (tr3, _) = split_train_val(&data, 0.8, 8).unwrap();
        assert_ne!(tr.labels, tr3.labels);
    }

    #[test]
    fn per_class_counts_within_one_of_ratio() {
        let data = tiny(23, 3);
        let (tr, _) = split_train_val(&data, 0.7, 3).unwrap();
        for k in 0..3u32 {
            let nj = data.labels.iter().filter(|&&l| l == k).count() as f64;
            let tk = tr.labels.iter().filter(|&&l| l == k).count() as f64;
            assert!((tk - 0.7 * nj).abs() <= 1.0);
        }
    }

    #[test]
    fn emptying_split_is_contract_error() {
        let data = tiny(4, 4);
        assert!(split_train_val(&data, 0.1, 0).is_err());
    }

    #[test]
    fn generators_are_pure_functions_of_spec() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::TileSeparable,
            count: 12,
            spatial: vec![8, 8],
            channels: 1,
            classes: 3,
            seed: 42,
        };
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels, b.labels);
        assert!(a.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn volumetric_blob_is_rank_3() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::VolumetricBlob,
            count: 4,
            spatial: vec![16, 16, 8],
            channels: 1,
            classes: 2,
            seed: 1,
        };
        let data = gen_synthetic(&spec).unwrap();
        assert_eq!(data.images.shape(), &[4, 1, 16, 16, 8]);
    }

    #[test]
    fn unknown_kind_is_rejected_at_parse() {
        assert!(SyntheticKind::parse("mystery-blobs").is_err());
    }
}
