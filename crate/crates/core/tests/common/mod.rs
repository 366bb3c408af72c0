//! Shared test oracles.
//!
//! Everything in here is deliberately written from first principles, without
//! calling into the library's own linear algebra or autodiff, so the checks
//! stay independent of the code paths they verify.

#![allow(dead_code)]

use rand::Rng;

/// Dense symmetric test matrix as rows.
pub type Mat = Vec<Vec<f64>>;

pub fn mat_zeros(n: usize) -> Mat {
    vec![vec![0.0; n]; n]
}

pub fn mat_identity(n: usize) -> Mat {
    let mut m = mat_zeros(n);
    for i in 0..n {
        m[i][i] = 1.0;
    }
    m
}

/// Random symmetric matrix with entries in [-1, 1].
pub fn random_symmetric(n: usize, rng: &mut impl Rng) -> Mat {
    let mut m = mat_zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = rng.gen_range(-1.0..1.0);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Random symmetric positive definite matrix, built as M^T M + I.
pub fn random_spd(n: usize, rng: &mut impl Rng) -> Mat {
    let mut m = mat_zeros(n);
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let mut spd = mat_zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = if i == j { 1.0 } else { 0.0 };
            for row in &m {
                acc += row[i] * row[j];
            }
            spd[i][j] = acc;
        }
    }
    spd
}

/// Count negative pivots of a symmetric matrix under plain Gaussian
/// elimination. Returns None when a pivot is too close to zero to trust.
fn count_negative_pivots(mut m: Mat) -> Option<usize> {
    let n = m.len();
    let scale: f64 = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, &x| a.max(x.abs()))
        .max(1e-300);
    let mut negatives = 0;
    for k in 0..n {
        let pivot = m[k][k];
        if pivot.abs() < 1e-13 * scale {
            return None;
        }
        if pivot < 0.0 {
            negatives += 1;
        }
        for i in k + 1..n {
            let f = m[i][k] / pivot;
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    Some(negatives)
}

/// Number of generalized eigenvalues of (A, B) strictly below `x`, by
/// Sylvester inertia of A - x B. B must be positive definite.
fn count_below(a: &Mat, b: &Mat, x: f64) -> usize {
    let n = a.len();
    let mut shift = x;
    // Nudge the evaluation point off any exact eigenvalue.
    for attempt in 0..64 {
        let mut m = mat_zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[i][j] = a[i][j] - shift * b[i][j];
            }
        }
        if let Some(c) = count_negative_pivots(m) {
            return c;
        }
        let eps = (1.0 + x.abs()) * 1e-12 * (attempt + 1) as f64;
        shift = x + eps;
    }
    panic!("inertia count failed to stabilize at x = {x}");
}

/// All generalized eigenvalues of (A, B), ascending, by inertia bisection.
/// Pass the identity for B to get the standard symmetric eigenvalues.
///
/// This is the brute-force oracle: it never factors, rotates, or reduces;
/// it only counts pivot signs and bisects.
pub fn generalized_eigenvalues_bisect(a: &Mat, b: &Mat) -> Vec<f64> {
    let n = a.len();
    assert_eq!(b.len(), n);
    // Expand a symmetric bracket until it contains the whole spectrum.
    let mut radius = 1.0
        + a.iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |acc, &x| acc.max(x.abs()))
            * n as f64
            * 16.0;
    for _ in 0..200 {
        if count_below(a, b, -radius) == 0 && count_below(a, b, radius) == n {
            break;
        }
        radius *= 2.0;
    }
    assert_eq!(count_below(a, b, -radius), 0, "lower bracket failed");
    assert_eq!(count_below(a, b, radius), n, "upper bracket failed");

    (0..n)
        .map(|k| {
            let mut lo = -radius;
            let mut hi = radius;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if count_below(a, b, mid) >= k + 1 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-13 * (1.0 + hi.abs().max(lo.abs())) {
                    break;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// Standard symmetric eigenvalues, ascending.
pub fn symmetric_eigenvalues_bisect(a: &Mat) -> Vec<f64> {
    let b = mat_identity(a.len());
    generalized_eigenvalues_bisect(a, &b)
}

/// Central finite difference of a scalar function of one coordinate.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with a unit floor, as used by the gradient checker spec.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

pub mod dd {
    //! Zero-coupling composition check shared by the composition tests and
    //! the acceptance suite.

    use ddclass_core::autodiff::forward;
    use ddclass_core::decomp::{extract_tile_batch, Decomposition};
    use ddclass_core::nn::softmax_forward;
    use ddclass_core::tensor::Tensor;
    use ddclass_core::zoo::{Layer, NetworkGraph, ReassemblyMap};

    /// Forward the assembled global and every subnet on a batch of images
    /// and return the largest absolute deviation from the zero-coupling
    /// composition property across all layers: intermediate feature maps
    /// must equal the channel-wise concatenation of the subnet maps, the
    /// classifier logits must equal the subnet logit sum, and the terminal
    /// probabilities must match the softmax of that sum.
    pub fn max_composition_gap(
        global: &NetworkGraph,
        subnets: &[NetworkGraph],
        map: &ReassemblyMap,
        plan: &Decomposition,
        images: &Tensor,
    ) -> f64 {
        let n = subnets.len();
        let batch = images.shape()[0];
        let (_, gtape) = forward(global, images, &global.params).unwrap();
        let subtapes: Vec<_> = (0..n)
            .map(|i| {
                let tile = extract_tile_batch(images, plan, i).unwrap();
                forward(&subnets[i], &tile, &subnets[i].params).unwrap().1
            })
            .collect();

        let classifier = subnets[0]
            .layers
            .iter()
            .rposition(|l| matches!(l, Layer::Dense { .. }))
            .expect("subnet has a classifier");

        let mut worst = 0.0f64;
        for (li, layer) in subnets[0].layers.iter().enumerate() {
            let gout = gtape.layer_output(li + map.layer_offset);
            if li < classifier {
                // Concatenation property, sliced along channels or columns.
                for (s, stape) in subtapes.iter().enumerate() {
                    let sout = stape.layer_output(li);
                    let per = sout.len() / batch;
                    let gper = gout.len() / batch;
                    assert_eq!(gper, per * n, "layer {} ({}) group sizes", li, layer.kind());
                    // Channels (or dense columns) are the leading per-sample
                    // axis, so group s is one contiguous block per sample.
                    for b in 0..batch {
                        for e in 0..per {
                            let d = (gout.data()[b * gper + s * per + e] - sout.data()[b * per + e]).abs();
                            if d > worst {
                                worst = d;
                            }
                        }
                    }
                }
            } else if li == classifier {
                // Logit sum property.
                let k = gout.shape()[1];
                for b in 0..batch {
                    for c in 0..k {
                        let sum: f64 = subtapes
                            .iter()
                            .map(|t| t.layer_output(classifier).at2(b, c))
                            .sum();
                        let d = (gout.at2(b, c) - sum).abs();
                        if d > worst {
                            worst = d;
                        }
                    }
                }
            } else if matches!(layer, Layer::Softmax { .. }) {
                // softmax(sum of logits) == global probabilities.
                let k = gout.shape()[1];
                let mut summed = Tensor::zeros(vec![batch, k]);
                for b in 0..batch {
                    for c in 0..k {
                        let s: f64 = subtapes
                            .iter()
                            .map(|t| t.layer_output(classifier).at2(b, c))
                            .sum();
                        summed.set2(b, c, s);
                    }
                }
                let probs = softmax_forward(&summed).unwrap();
                let d = probs.max_abs_diff(gout);
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}

pub mod toys {
    //! Small graphs exercising each layer kind, for gradient checking.

    use ddclass_core::nn::{ConvSpec, Padding};
    use ddclass_core::tensor::{Precision, Tensor};
    use ddclass_core::zoo::{Layer, NetworkGraph, Src};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_input(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::with_precision(shape, data, Precision::Double).unwrap()
    }

    pub fn random_labels(batch: usize, k: usize, rng: &mut impl Rng) -> Vec<u32> {
        (0..batch).map(|_| rng.gen_range(0..k as u32)).collect()
    }

    fn finish(layers: Vec<Layer>, input_shape: Vec<usize>, k: usize, seed: u64) -> NetworkGraph {
        let mut g = NetworkGraph::new(layers, input_shape, k, None).unwrap();
        g.randomize(seed);
        g
    }

    /// dense -> relu -> dense -> softmax over a flat feature vector.
    pub fn dense_net(seed: u64) -> (NetworkGraph, Vec<usize>, usize) {
        let layers = vec![
            Layer::Dense { name: "d1".into(), units: 5, input: Src::Input },
            Layer::Relu { input: Src::Layer(0) },
            Layer::Dense { name: "d2".into(), units: 3, input: Src::Layer(1) },
            Layer::Softmax { input: Src::Layer(2) },
        ];
        (finish(layers, vec![4], 3, seed), vec![4], 3)
    }

    /// conv2d -> relu -> pool -> dense -> softmax.
    pub fn conv2d_net(seed: u64) -> (NetworkGraph, Vec<usize>, usize) {
        let layers = vec![
            Layer::Conv {
                name: "c1".into(),
                spec: ConvSpec::new(2, 3, 2, 3, Padding::Same).unwrap(),
                input: Src::Input,
            },
            Layer::Relu { input: Src::Layer(0) },
            Layer::MaxPool { window: vec![2, 2], stride: vec![2, 2], input: Src::Layer(1) },
            Layer::Dense { name: "d1".into(), units: 3, input: Src::Layer(2) },
            Layer::Softmax { input: Src::Layer(3) },
        ];
        (finish(layers, vec![2, 6, 6], 3, seed), vec![2, 6, 6], 3)
    }

    /// conv3d -> relu -> pool3d -> dense -> softmax.
    pub fn conv3d_net(seed: u64) -> (NetworkGraph, Vec<usize>, usize) {
        let layers = vec![
            Layer::Conv {
                name: "c1".into(),
                spec: ConvSpec::new(3, 3, 1, 2, Padding::Same).unwrap(),
                input: Src::Input,
            },
            Layer::Relu { input: Src::Layer(0) },
            Layer::MaxPool { window: vec![2, 2, 2], stride: vec![2, 2, 2], input: Src::Layer(1) },
            Layer::Dense { name: "d1".into(), units: 2, input: Src::Layer(2) },
            Layer::Softmax { input: Src::Layer(3) },
        ];
        (finish(layers, vec![1, 4, 4, 4], 2, seed), vec![1, 4, 4, 4], 2)
    }

    /// Valid-padding strided conv plus an overlapping pool.
    pub fn strided_net(seed: u64) -> (NetworkGraph, Vec<usize>, usize) {
        let spec = ConvSpec::new(2, 3, 1, 2, Padding::Valid)
            .unwrap()
            .with_stride(vec![2, 2])
            .unwrap();
        let layers = vec![
            Layer::Conv { name: "c1".into(), spec, input: Src::Input },
            Layer::Relu { input: Src::Layer(0) },
            Layer::MaxPool { window: vec![2, 2], stride: vec![1, 1], input: Src::Layer(1) },
            Layer::Dense { name: "d1".into(), units: 2, input: Src::Layer(2) },
            Layer::Softmax { input: Src::Layer(3) },
        ];
        (finish(layers, vec![1, 9, 9], 2, seed), vec![1, 9, 9], 2)
    }

    /// A mid-graph softmax feeding a dense layer, so the standalone softmax
    /// backward (not the fused loss) is exercised.
    pub fn mid_softmax_net(seed: u64) -> (NetworkGraph, Vec<usize>, usize) {
        let layers = vec![
            Layer::Dense { name: "d1".into(), units: 4, input: Src::Input },
            Layer::Softmax { input: Src::Layer(0) },
            Layer::Dense { name: "d2".into(), units: 3, input: Src::Layer(1) },
            Layer::Softmax { input: Src::Layer(2) },
        ];
        (finish(layers, vec![4], 3, seed), vec![4], 3)
    }

    /// Two parallel dense paths joined by add, then concat with a third.
    pub fn add_concat_net(seed: u64) -> (NetworkGraph, Vec<usize>, usize) {
        let layers = vec![
            Layer::Dense { name: "d1".into(), units: 4, input: Src::Input },
            Layer::Dense { name: "d2".into(), units: 4, input: Src::Input },
            Layer::Add { lhs: Src::Layer(0), rhs: Src::Layer(1) },
            Layer::Relu { input: Src::Layer(2) },
            Layer::Dense { name: "d3".into(), units: 2, input: Src::Input },
            Layer::Concat { inputs: vec![Src::Layer(3), Src::Layer(4)] },
            Layer::Dense { name: "d4".into(), units: 3, input: Src::Layer(5) },
            Layer::Softmax { input: Src::Layer(6) },
        ];
        (finish(layers, vec![5], 3, seed), vec![5], 3)
    }

    /// Every toy builder, labeled by the layer kind it covers.
    #[allow(clippy::type_complexity)]
    pub fn all() -> Vec<(&'static str, fn(u64) -> (NetworkGraph, Vec<usize>, usize))> {
        vec![
            ("dense", dense_net),
            ("conv2d", conv2d_net),
            ("conv3d", conv3d_net),
            ("strided-conv+pool", strided_net),
            ("softmax", mid_softmax_net),
            ("add+concat", add_concat_net),
        ]
    }

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}

#[cfg(test)]
mod oracle_sanity {
    use super::*;

    #[test]
    fn bisect_recovers_diagonal_eigenvalues() {
        let mut a = mat_zeros(3);
        a[0][0] = -2.0;
        a[1][1] = 0.5;
        a[2][2] = 7.0;
        let vals = symmetric_eigenvalues_bisect(&a);
        assert!((vals[0] + 2.0).abs() < 1e-10);
        assert!((vals[1] - 0.5).abs() < 1e-10);
        assert!((vals[2] - 7.0).abs() < 1e-10);
    }

    #[test]
    fn bisect_handles_generalized_pair() {
        // A = [[1,0],[0,4]], B = [[1,0],[0,2]] -> eigenvalues 1 and 2.
        let mut a = mat_zeros(2);
        a[0][0] = 1.0;
        a[1][1] = 4.0;
        let mut b = mat_identity(2);
        b[1][1] = 2.0;
        let vals = generalized_eigenvalues_bisect(&a, &b);
        assert!((vals[0] - 1.0).abs() < 1e-10);
        assert!((vals[1] - 2.0).abs() < 1e-10);
    }
}
