mod common;

use common::random_tensor;
use fads::graph::{load_graph, save_graph, LayerKind, LayerSpec, NetworkGraph};
use fads::refnet::{reference_graph, REFERENCE_INPUT};
use fads::rng::SplitMix64;
use fads::weights::{load_weights, save_weights};
use fads::{make_reference_net, FadsError, WeightStore};
use proptest::prelude::*;

#[test]
fn reference_description_has_32_filters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("refnet.json");
    save_graph(&reference_graph(REFERENCE_INPUT).unwrap(), &path).unwrap();
    let g = load_graph(&path).unwrap();
    assert_eq!(g.filter_count(), 32);
    assert_eq!(g.output_shape(g.layers().len() - 1), &[8, 16, 16]);
}

#[test]
fn weights_survive_a_disk_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (g, w) = make_reference_net(42);
    let path = dir.path().join("refnet.fadsw");
    save_weights(&w, &path).unwrap();
    let back = load_weights(&path, &g).unwrap();
    assert_eq!(back.len(), w.len());
    for ((na, a), (nb, b)) in w.iter().zip(back.iter()) {
        assert_eq!(na, nb);
        let bits = |t: &fads::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(std::fs::read(&path).unwrap(), w.to_bytes());
}

#[test]
fn reference_net_is_reproducible_and_seed_dependent() {
    let (_, a) = make_reference_net(42);
    let (_, b) = make_reference_net(42);
    let (_, c) = make_reference_net(43);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn weights_for_another_graph_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, w) = make_reference_net(1);
    let path = dir.path().join("w.bin");
    save_weights(&w, &path).unwrap();
    let other = NetworkGraph::new(
        "other",
        [1, 16, 16],
        vec![LayerSpec::new("conv1", LayerKind::Conv2d { out: 4, kh: 3, kw: 3, stride: 1, pad: 1 })],
    )
    .unwrap();
    assert!(load_weights(&path, &other).is_err());
}

#[test]
fn truncated_and_missing_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (g, w) = make_reference_net(1);
    let bytes = w.to_bytes();
    let path = dir.path().join("cut.bin");
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(load_weights(&path, &g), Err(FadsError::Truncated { .. })));
    assert!(matches!(load_weights(dir.path().join("absent.bin"), &g), Err(FadsError::Io { .. })));
    assert!(matches!(load_graph(dir.path().join("absent.json")), Err(FadsError::Io { .. })));
}

#[test]
fn malformed_graph_json_reports_position() {
    let err = NetworkGraph::from_json("{\n  \"name\": \"x\",\n  \"input\": [1, 8, 8],\n  \"layers\": [\n    {\"id\": \"a\", \"kind\": \"nope\"}\n  ]\n}").unwrap_err();
    match err {
        FadsError::GraphParse { line, .. } => assert_eq!(line, 5),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn graph_structure_errors() {
    let conv = || LayerKind::Conv2d { out: 2, kh: 3, kw: 3, stride: 1, pad: 1 };
    let forward_ref = NetworkGraph::new(
        "g",
        [1, 8, 8],
        vec![LayerSpec::new("a", conv()).with_inputs(&["b"]), LayerSpec::new("b", conv())],
    );
    assert!(forward_ref.unwrap_err().to_string().contains("DAG"));
    let dup = NetworkGraph::new("g", [1, 8, 8], vec![LayerSpec::new("a", conv()), LayerSpec::new("a", LayerKind::Relu)]);
    assert!(dup.is_err());
    let too_small = NetworkGraph::new("g", [1, 2, 2], vec![LayerSpec::new("a", LayerKind::Conv2d { out: 1, kh: 5, kw: 5, stride: 1, pad: 0 })]);
    assert!(too_small.is_err());
}

fn arb_graph() -> impl Strategy<Value = NetworkGraph> {
    let layer = prop_oneof![
        (1usize..6, 1usize..4, 0usize..2).prop_map(|(out, k, pad)| LayerKind::Conv2d { out, kh: k, kw: k, stride: 1, pad }),
        Just(LayerKind::Relu),
        Just(LayerKind::Batchnorm { eps: 1e-5 }),
    ];
    (1usize..4, prop::collection::vec(layer, 1..6)).prop_filter_map("first layer must be a conv", |(c, kinds)| {
        let layers: Vec<LayerSpec> = kinds.into_iter().enumerate().map(|(i, k)| LayerSpec::new(format!("l{i}"), k)).collect();
        NetworkGraph::new("prop", [c, 12, 12], layers).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_json_round_trips(g in arb_graph()) {
        let back = NetworkGraph::from_json(&g.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), g.to_json());
        prop_assert_eq!(back.filter_count(), g.filter_count());
    }

    #[test]
    fn weight_bytes_round_trip(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = SplitMix64::new(seed);
        let mut w = WeightStore::new();
        for i in 0..n {
            let rank = 1 + (rng.below(4) as usize);
            let shape: Vec<usize> = (0..rank).map(|_| 1 + rng.below(4) as usize).collect();
            w.insert(&format!("layer{i}"), "kernel", random_tensor(&mut rng, &shape, 3.0));
        }
        let back = WeightStore::from_bytes(&w.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), w.to_bytes());
    }
}
