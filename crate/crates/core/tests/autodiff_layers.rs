//! Gradient correctness: every layer kind against central finite
//! differences, tape linearity, and the hand-derived scalar tapes.

mod common;

use common::toys;
use ddclass_core::autodiff::{
    backward, forward, forward_with_loss, grad_check, max_rel_error_vs_fd, Recorded, Tape,
};
use ddclass_core::nn::{conv_forward, dense_forward, relu_forward, softmax_forward};
use ddclass_core::tensor::{Precision, Tensor};
use ddclass_core::zoo::{Layer, NetworkGraph, ParamSet, Src};

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;

#[test]
fn every_layer_kind_passes_grad_check() {
    for (kind, build) in toys::all() {
        for seed in 0..5u64 {
            let (graph, input_shape, k) = build(100 + seed);
            let mut rng = toys::rng(7_000 + seed);
            let mut shape = vec![2];
            shape.extend(input_shape);
            let input = toys::random_input(shape, &mut rng);
            let labels = toys::random_labels(2, k, &mut rng);
            let err = grad_check(&graph, &input, &labels, &graph.params, H, 40).unwrap();
            assert!(err <= TOL, "{kind} seed {seed}: grad check error {err:e}");
        }
    }
}

#[test]
fn corrupted_gradients_are_flagged_by_the_checker() {
    let (graph, _, k) = toys::dense_net(3);
    let mut rng = toys::rng(33);
    let input = toys::random_input(vec![2, 4], &mut rng);
    let labels = toys::random_labels(2, k, &mut rng);

    let mut params: ParamSet = graph
        .params
        .iter()
        .map(|(n, t)| (n.clone(), t.to_precision(Precision::Double)))
        .collect();
    let input = input.to_precision(Precision::Double);
    let (_, _, tape) = forward_with_loss(&graph, &input, &labels, &params).unwrap();
    let mut grads = backward(&tape, &params, 1.0).unwrap();

    // Sanity: intact gradients pass.
    let ok = max_rel_error_vs_fd(&graph, &input, &labels, &mut params, &grads, H, 64).unwrap();
    assert!(ok <= TOL);

    // Corrupt one gradient tensor by scaling; the checker must notice.
    let g = grads.get_mut("d1/weight").unwrap();
    *g = g.map(|x| 3.0 * x + 0.05);
    let bad = max_rel_error_vs_fd(&graph, &input, &labels, &mut params, &grads, H, 64).unwrap();
    assert!(bad > 1e-2, "corrupted backward slipped through: {bad:e}");
}

#[test]
fn backward_is_linear_in_the_loss() {
    // Mean CE over a 2-batch equals half the sum of the per-sample
    // backwards, exactly in 64-bit.
    let (graph, _, k) = toys::conv2d_net(11);
    let mut rng = toys::rng(501);
    let a = toys::random_input(vec![1, 2, 6, 6], &mut rng);
    let b = toys::random_input(vec![1, 2, 6, 6], &mut rng);
    let labels = toys::random_labels(2, k, &mut rng);
    let params: ParamSet = graph
        .params
        .iter()
        .map(|(n, t)| (n.clone(), t.to_precision(Precision::Double)))
        .collect();

    let mut both_data = a.data().to_vec();
    both_data.extend_from_slice(b.data());
    let both = Tensor::with_precision(vec![2, 2, 6, 6], both_data, Precision::Double).unwrap();

    let (_, _, tape) = forward_with_loss(&graph, &both, &labels, &params).unwrap();
    let g_batch = backward(&tape, &params, 1.0).unwrap();

    let (_, _, ta) = forward_with_loss(&graph, &a, &labels[..1], &params).unwrap();
    let ga = backward(&ta, &params, 1.0).unwrap();
    let (_, _, tb) = forward_with_loss(&graph, &b, &labels[1..], &params).unwrap();
    let gb = backward(&tb, &params, 1.0).unwrap();

    for (name, g) in &g_batch {
        for i in 0..g.len() {
            let split = 0.5 * (ga[name].data()[i] + gb[name].data()[i]);
            let diff = (g.data()[i] - split).abs();
            assert!(diff <= 1e-15 * g.data()[i].abs().max(1.0), "{name}[{i}]: {diff:e}");
        }
    }
}

#[test]
fn empty_graph_is_identity_with_input_only_tape() {
    let graph = NetworkGraph {
        layers: vec![],
        input_shape: vec![3],
        num_classes: 3,
        params: ParamSet::new(),
        plan: None,
        marks: Default::default(),
    };
    let input = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let (out, tape) = forward(&graph, &input, &graph.params).unwrap();
    assert_eq!(out, input);
    assert_eq!(tape.nodes.len(), 1);
}

#[test]
fn zero_weight_dense_outputs_bias() {
    let layers = vec![
        Layer::Dense { name: "d1".into(), units: 2, input: Src::Input },
        Layer::Softmax { input: Src::Layer(0) },
    ];
    let mut graph = NetworkGraph::new(layers, vec![3], 2, None).unwrap();
    graph
        .params
        .insert("d1/bias".into(), Tensor::from_vec(vec![2], vec![0.5, -0.5]).unwrap());
    let input = Tensor::from_vec(vec![1, 3], vec![9.0, 9.0, 9.0]).unwrap();
    let (_, tape) = forward(&graph, &input, &graph.params).unwrap();
    assert_eq!(tape.layer_output(0).data(), &[0.5, -0.5]);
}

#[test]
fn two_layer_net_matches_hand_composition() {
    let (graph, _, _) = toys::conv2d_net(42);
    let mut rng = toys::rng(43);
    let input = toys::random_input(vec![1, 2, 6, 6], &mut rng);
    let (probs, tape) = forward(&graph, &input, &graph.params).unwrap();

    // Compose the kernels by hand.
    let spec = match &graph.layers[0] {
        Layer::Conv { spec, .. } => spec.clone(),
        _ => unreachable!(),
    };
    let c = conv_forward(&input, &spec, &graph.params["c1/weight"], &graph.params["c1/bias"]).unwrap();
    let r = relu_forward(&c);
    let (p, _) = ddclass_core::nn::maxpool_forward(&r, &[2, 2], &[2, 2]).unwrap();
    let flat = p.reshape(vec![1, p.len()]).unwrap();
    let d = dense_forward(&flat, &graph.params["d1/weight"], &graph.params["d1/bias"]).unwrap();
    let s = softmax_forward(&d).unwrap();

    assert_eq!(tape.layer_output(0).data(), c.data());
    assert_eq!(probs.data(), s.data());
}

#[test]
fn scalar_tape_w_times_x() {
    // loss = w * x at x = 3: dw = 3.
    let mut params = ParamSet::new();
    params.insert(
        "w/weight".into(),
        Tensor::with_precision(vec![1, 1], vec![1.7], Precision::Double).unwrap(),
    );
    params.insert("w/bias".into(), Tensor::zeros_with(vec![1], Precision::Double));

    let x = Tensor::with_precision(vec![1, 1], vec![3.0], Precision::Double).unwrap();
    let mut tape = Tape::default();
    tape.push(Recorded::Input, vec![], x.clone(), false);
    let y = dense_forward(&x, &params["w/weight"], &params["w/bias"]).unwrap();
    tape.push(Recorded::Dense { name: "w".into() }, vec![0], y, true);
    let s = Tensor::with_precision(vec![1], vec![1.7 * 3.0], Precision::Double).unwrap();
    tape.push(Recorded::SumAll, vec![1], s, true);

    let grads = backward(&tape, &params, 1.0).unwrap();
    assert_eq!(grads["w/weight"].data(), &[3.0]);
}

#[test]
fn scalar_tape_square_of_shifted_weight() {
    // loss = (w - 1)^2 at w = 3: dw = 4.
    let w = 3.0;
    let mut params = ParamSet::new();
    params.insert(
        "w/weight".into(),
        Tensor::with_precision(vec![1, 1], vec![w], Precision::Double).unwrap(),
    );
    params.insert(
        "w/bias".into(),
        Tensor::with_precision(vec![1], vec![-1.0], Precision::Double).unwrap(),
    );

    let x = Tensor::with_precision(vec![1, 1], vec![1.0], Precision::Double).unwrap();
    let mut tape = Tape::default();
    tape.push(Recorded::Input, vec![], x.clone(), false);
    let y = dense_forward(&x, &params["w/weight"], &params["w/bias"]).unwrap();
    tape.push(Recorded::Dense { name: "w".into() }, vec![0], y.clone(), true);
    let sq = y.map(|v| v * v);
    tape.push(Recorded::Square, vec![1], sq.clone(), true);
    let s = Tensor::with_precision(vec![1], vec![sq.data()[0]], Precision::Double).unwrap();
    tape.push(Recorded::SumAll, vec![2], s, true);

    let grads = backward(&tape, &params, 1.0).unwrap();
    assert!((grads["w/weight"].data()[0] - 4.0).abs() < 1e-12);
}

#[test]
fn non_scalar_terminal_is_contract_error() {
    let (graph, _, _) = toys::dense_net(1);
    let mut rng = toys::rng(2);
    let input = toys::random_input(vec![2, 4], &mut rng);
    let (_, tape) = forward(&graph, &input, &graph.params).unwrap();
    assert!(backward(&tape, &graph.params, 1.0).is_err());
}
