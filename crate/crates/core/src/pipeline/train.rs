//! The supervised training loop and the worker pool for independent local
//! trainings.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, forward_with_loss};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState};
use crate::zoo::{NetworkGraph, ParamSet};

/// Metrics of one training epoch: running loss/accuracy over the training
/// pass and a full evaluation pass over the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetric {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_row(probs: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in probs.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Mini-batch accuracy/loss over a dataset with fixed parameters.
pub fn eval_graph(
    graph: &NetworkGraph,
    params: &ParamSet,
    data: &LabeledDataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation over an empty dataset".into()));
    }
    let n = data.len();
    let k = data.class_count;
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    let mut start = 0usize;
    while start < n {
        let end = (start + batch_size).min(n);
        let idxs: Vec<usize> = (start..end).collect();
        let (images, labels) = data.gather(&idxs);
        let (loss, probs, _) = forward_with_loss(graph, &images, &labels, params)?;
        loss_sum += loss * idxs.len() as f64;
        for (row, &label) in labels.iter().enumerate() {
            let p = &probs.data()[row * k..(row + 1) * k];
            if argmax_row(p) == label as usize {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((correct as f64 / n as f64, loss_sum / n as f64))
}

/// Train a graph with Adam and mean cross-entropy. Deterministic given the
/// seed: initialization comes with the graph, the shuffle order is seeded,
/// and gradient reduction is an ordered sum. Returns the trained parameters
/// and one metric record per epoch.
pub fn train_supervised(
    graph: &NetworkGraph,
    train: &LabeledDataset,
    val: &LabeledDataset,
    epochs: usize,
    optimizer: &mut AdamState,
    seed: u64,
    batch_size: usize,
    phase: &str,
) -> Result<(ParamSet, Vec<EpochMetric>)> {
    if train.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be >= 1".into()));
    }
    let mut params = graph.params.clone();
    let mut metrics = Vec::with_capacity(epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = train.len();
    let k = train.class_count;

    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut running_loss = 0.0f64;
        let mut running_correct = 0usize;
        for chunk in order.chunks(batch_size) {
            let (images, labels) = train.gather(chunk);
            let (loss, probs, tape) = forward_with_loss(graph, &images, &labels, &params)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            running_loss += loss * chunk.len() as f64;
            for (row, &label) in labels.iter().enumerate() {
                if argmax_row(&probs.data()[row * k..(row + 1) * k]) == label as usize {
                    running_correct += 1;
                }
            }
            let grads = backward(&tape, &params, 1.0)?;
            adam_step(&mut params, &grads, optimizer)?;
        }

        let (val_accuracy, val_loss) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            eval_graph(graph, &params, val, batch_size)?
        };
        metrics.push(EpochMetric {
            phase: phase.to_string(),
            epoch,
            train_loss: running_loss / n as f64,
            train_accuracy: running_correct as f64 / n as f64,
            val_loss,
            val_accuracy,
        });
    }
    Ok((params, metrics))
}

/// Run one job per item on up to `workers` threads. Results keep item
/// order; the returned seconds are per-worker busy times (max = parallel
/// wall time, sum = sequential-equivalent time).
pub fn parallel_map<T, R, F>(items: Vec<T>, workers: usize, f: F) -> (Vec<R>, Vec<f64>)
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    let n = items.len();
    let jobs: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let mut times = vec![0.0f64; workers];

    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for _ in 0..workers {
            let jobs = &jobs;
            let results = &results;
            let next = &next;
            let f = &f;
            handles.push(scope.spawn(move || {
                let started = Instant::now();
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    let item = jobs[i].lock().unwrap().take().expect("job taken once");
                    let r = f(i, item);
                    *results[i].lock().unwrap() = Some(r);
                }
                started.elapsed().as_secs_f64()
            }));
        }
        for (w, h) in handles.into_iter().enumerate() {
            times[w] = h.join().expect("worker panicked");
        }
    });

    let out: Vec<R> = results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every job ran"))
        .collect();
    (out, times)
}
