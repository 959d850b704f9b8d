//! Small seeded stand-in for a pretrained feature extractor.

use crate::graph::{LayerKind, LayerSpec, NetworkGraph};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::weights::WeightStore;

pub const REFERENCE_INPUT: [usize; 3] = [1, 64, 64];

/// Three 3x3 conv blocks (8, 16, 8 filters) with 2x2 pooling in between.
pub fn reference_graph(input: [usize; 3]) -> crate::Result<NetworkGraph> {
    let conv = |out| LayerKind::Conv2d { out, kh: 3, kw: 3, stride: 1, pad: 1 };
    let pool = || LayerKind::Maxpool { window: 2, stride: 2 };
    NetworkGraph::new(
        "fads-reference",
        input,
        vec![
            LayerSpec::new("conv1", conv(8)),
            LayerSpec::new("relu1", LayerKind::Relu),
            LayerSpec::new("pool1", pool()),
            LayerSpec::new("conv2", conv(16)),
            LayerSpec::new("relu2", LayerKind::Relu),
            LayerSpec::new("pool2", pool()),
            LayerSpec::new("conv3", conv(8)),
            LayerSpec::new("relu3", LayerKind::Relu),
        ],
    )
}

/// Builds the reference network with Glorot-uniform kernels drawn from a
/// SplitMix64 stream and zero biases. Kernels are drawn layer by layer in
/// row-major order, so the same seed always yields identical weights.
pub fn make_reference_net(seed: u64) -> (NetworkGraph, WeightStore) {
    let graph = reference_graph(REFERENCE_INPUT).expect("reference topology is valid");
    let mut rng = SplitMix64::new(seed);
    let mut weights = WeightStore::new();
    let mut in_channels = REFERENCE_INPUT[0];
    for layer in graph.layers() {
        if let LayerKind::Conv2d { out, kh, kw, .. } = layer.kind {
            let fan_in = in_channels * kh * kw;
            let fan_out = out * kh * kw;
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n = out * in_channels * kh * kw;
            let data = (0..n).map(|_| rng.symmetric(a) as f32).collect();
            weights.insert(&layer.id, "kernel", Tensor::new(vec![out, in_channels, kh, kw], data).unwrap());
            weights.insert(&layer.id, "bias", Tensor::zeros(&[out]));
            in_channels = out;
        }
    }
    (graph, weights)
}
