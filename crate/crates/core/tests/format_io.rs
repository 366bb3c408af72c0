//! Container format stability: bit-exact round trips and positioned
//! rejection of corrupted headers.

mod common;

use ddclass_core::data::{
    load_container, load_params, save_container, save_params, Payload, TensorContainer,
};
use ddclass_core::tensor::Tensor;
use ddclass_core::Error;
use proptest::prelude::*;
use std::collections::BTreeMap;

#[test]
fn dten_file_roundtrip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.dten");
    let payload: Vec<f32> = (0..24).map(|i| (i as f32).sin()).collect();
    let c = TensorContainer::new(vec![2, 3, 4], Payload::F32(payload)).unwrap();
    save_container(&path, &c).unwrap();
    let bytes1 = std::fs::read(&path).unwrap();
    let back = load_container(&path).unwrap();
    assert_eq!(back, c);
    save_container(&path, &back).unwrap();
    let bytes2 = std::fs::read(&path).unwrap();
    assert_eq!(bytes1, bytes2);
}

#[test]
fn dprm_checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.dprm");
    let mut params = BTreeMap::new();
    params.insert("conv1/weight".to_string(), Tensor::from_vec(vec![2, 2], vec![0.5, -1.25, 3.0, 0.0]).unwrap());
    params.insert("conv1/bias".to_string(), Tensor::from_vec(vec![2], vec![0.1, 0.2]).unwrap());
    save_params(&path, &params).unwrap();
    let back = load_params(&path).unwrap();
    assert_eq!(back.len(), 2);
    for (name, t) in &params {
        assert_eq!(back[name].shape(), t.shape());
        for (a, b) in back[name].data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{name}");
        }
    }
}

#[test]
fn corrupted_headers_are_rejected_with_positions() {
    let good = TensorContainer::new(vec![3], Payload::F32(vec![1.0, 2.0, 3.0]))
        .unwrap()
        .to_bytes();

    // Bad magic at offset 0.
    let mut bad = good.clone();
    bad[2] = b'!';
    match TensorContainer::from_bytes_at(&bad, 0) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("{other:?}"),
    }

    // Bad version at offset 4.
    let mut bad = good.clone();
    bad[4] = 9;
    match TensorContainer::from_bytes_at(&bad, 0) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
        other => panic!("{other:?}"),
    }

    // Bad dtype at offset 5.
    let mut bad = good.clone();
    bad[5] = 7;
    match TensorContainer::from_bytes_at(&bad, 0) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 5),
        other => panic!("{other:?}"),
    }

    // Truncation inside the payload reports the cut position.
    let cut = &good[..good.len() - 1];
    match TensorContainer::from_bytes_at(cut, 0) {
        Err(Error::Format { offset, detail }) => {
            assert_eq!(offset, cut.len() as u64);
            assert!(detail.contains("payload"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn trailing_bytes_after_container_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.dten");
    let c = TensorContainer::new(vec![1], Payload::U32(vec![5])).unwrap();
    let mut bytes = c.to_bytes();
    bytes.push(0xAB);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_container(&path), Err(Error::Format { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn container_bytes_roundtrip(
        extents in prop::collection::vec(1u32..6, 1..4),
        seed in 0u64..10_000,
        as_labels in any::<bool>(),
    ) {
        let n: usize = extents.iter().map(|&e| e as usize).product();
        let payload = if as_labels {
            Payload::U32((0..n as u32).map(|i| i.wrapping_mul(2654435761).wrapping_add(seed as u32)).collect())
        } else {
            Payload::F32((0..n).map(|i| ((i as f32) + seed as f32 * 0.5).sin()).collect())
        };
        let c = TensorContainer::new(extents, payload).unwrap();
        let bytes = c.to_bytes();
        let (back, used) = TensorContainer::from_bytes_at(&bytes, 0).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, c);
    }

    #[test]
    fn partition_roundtrip_bit_exact_over_random_shapes(
        h in 2usize..13,
        w in 2usize..13,
        channels in 1usize..4,
        gh in 1usize..4,
        gw in 1usize..4,
        seed in 0u64..1000,
    ) {
        prop_assume!(gh <= h && gw <= w);
        use ddclass_core::decomp::{extract_tiles, plan_grid, reassemble_tiles};
        use rand::Rng;
        let mut rng = common::toys::rng(seed);
        let n = channels * h * w;
        let image = Tensor::from_vec(
            vec![channels, h, w],
            (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect(),
        ).unwrap();
        let plan = plan_grid(&[channels, h, w], &[gh, gw], 0).unwrap();
        let tiles = extract_tiles(&image, &plan).unwrap();
        let back = reassemble_tiles(&tiles, &plan).unwrap();
        for (a, b) in back.data().iter().zip(image.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
