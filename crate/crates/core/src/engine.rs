//! Network execution: forward pass recording every conv filter's map, and
//! reverse-mode accumulation of gradients back to the input image.

use serde::{Deserialize, Serialize};

use crate::error::{FadsError, Result};
use crate::graph::{LayerKind, NetworkGraph, Source};
use crate::ops::{self, BatchNormParams, GradMode};
use crate::tensor::Tensor;
use crate::weights::WeightStore;

/// Which version of a conv layer's output is recorded as its filter maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TapPoint {
    /// Raw convolution output, before any activation.
    #[default]
    Pre,
    /// Convolution output passed through `max(0, .)`.
    Post,
}

/// Everything a forward pass produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    input: Tensor,
    outputs: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
    filter_maps: Vec<Tensor>,
    filter_origin: Vec<(usize, usize)>,
    tap: TapPoint,
}

impl ActivationRecord {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    /// Output of every layer, in graph order.
    pub fn outputs(&self) -> &[Tensor] {
        &self.outputs
    }

    /// Winner indices of each pooling layer (`None` for other layers).
    pub fn argmax(&self, layer: usize) -> Option<&[usize]> {
        self.argmax.get(layer).and_then(|a| a.as_deref())
    }

    /// One `[H,W]` map per convolutional filter, in global filter order.
    pub fn filter_maps(&self) -> &[Tensor] {
        &self.filter_maps
    }

    /// `(layer index, channel)` of global filter `i`.
    pub fn filter_origin(&self, i: usize) -> (usize, usize) {
        self.filter_origin[i]
    }

    pub fn filter_count(&self) -> usize {
        self.filter_maps.len()
    }

    pub fn tap(&self) -> TapPoint {
        self.tap
    }

    /// The network output; recorded but unused by scoring.
    pub fn final_output(&self) -> &Tensor {
        self.outputs.last().expect("graphs have at least one layer")
    }

    fn source<'a>(&'a self, s: Source) -> &'a Tensor {
        match s {
            Source::Input => &self.input,
            Source::Layer(j) => &self.outputs[j],
        }
    }
}

fn bn_params<'a>(weights: &'a WeightStore, id: &str, eps: f32) -> Result<BatchNormParams<'a>> {
    Ok(BatchNormParams {
        mean: weights.get(id, "mean")?.data(),
        var: weights.get(id, "var")?.data(),
        gamma: weights.get(id, "gamma")?.data(),
        beta: weights.get(id, "beta")?.data(),
        eps,
    })
}

fn in_layer<T>(id: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ FadsError::Layer { .. } => e,
        other => FadsError::layer(id, other.to_string()),
    })
}

pub fn forward(graph: &NetworkGraph, weights: &WeightStore, image: &Tensor, tap: TapPoint) -> Result<ActivationRecord> {
    if image.shape() != graph.input() {
        return Err(FadsError::layer(
            "input",
            format!("image shape {:?} does not match graph input {:?}", image.shape(), graph.input()),
        ));
    }
    let n = graph.layers().len();
    let mut rec = ActivationRecord {
        input: image.clone(),
        outputs: Vec::with_capacity(n),
        argmax: Vec::with_capacity(n),
        filter_maps: Vec::with_capacity(graph.filter_count()),
        filter_origin: Vec::with_capacity(graph.filter_count()),
        tap,
    };

    for (i, layer) in graph.layers().iter().enumerate() {
        let id = layer.id.as_str();
        let srcs = graph.sources(i);
        let x = rec.source(srcs[0]);
        let mut argmax = None;
        let out = in_layer(id, (|| match layer.kind {
            LayerKind::Conv2d { stride, pad, .. } => {
                let kernel = weights.get(id, "kernel")?;
                let bias = weights.get(id, "bias")?;
                ops::conv2d(x, kernel, bias.data(), stride, pad)
            }
            LayerKind::Relu => Ok(ops::relu(x)),
            LayerKind::Maxpool { window, stride } => ops::maxpool(x, window, stride).map(|(t, a)| {
                argmax = Some(a);
                t
            }),
            LayerKind::Batchnorm { eps } => ops::batchnorm_inference(x, &bn_params(weights, id, eps)?),
            LayerKind::Add => {
                let mut sum = x.clone();
                sum.add_assign(rec.source(srcs[1])).map(|_| sum)
            }
            LayerKind::Gap => ops::global_avg_pool(x),
            LayerKind::Flatten => x.reshape(&[x.numel()]),
            LayerKind::Dense { .. } => {
                let w = weights.get(id, "weight")?;
                let b = weights.get(id, "bias")?;
                ops::dense(x, w, b.data())
            }
        })())?;
        if out.shape() != graph.output_shape(i) {
            return Err(FadsError::layer(
                id,
                format!("produced {:?}, graph expects {:?}", out.shape(), graph.output_shape(i)),
            ));
        }
        if !out.is_finite() {
            return Err(FadsError::layer(id, "produced a non-finite value"));
        }
        if let LayerKind::Conv2d { out: channels, .. } = layer.kind {
            for c in 0..channels {
                let map = out.channel(c)?;
                rec.filter_maps.push(match tap {
                    TapPoint::Pre => map,
                    TapPoint::Post => ops::relu(&map),
                });
                rec.filter_origin.push((i, c));
            }
        }
        rec.outputs.push(out);
        rec.argmax.push(argmax);
    }
    Ok(rec)
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradient of a scalar objective with respect to the input image.
///
/// `seeds` holds `(global filter index, d objective / d filter map)` pairs.
/// Each seed is injected at its conv layer's output and propagated in reverse
/// graph order; ReLU units follow `mode`.
pub fn backward(
    record: &ActivationRecord,
    graph: &NetworkGraph,
    weights: &WeightStore,
    seeds: &[(usize, Tensor)],
    mode: GradMode,
) -> Result<Tensor> {
    let n = graph.layers().len();
    let consistent = record.outputs.len() == n
        && record.input.shape() == graph.input()
        && (0..n).all(|i| record.outputs[i].shape() == graph.output_shape(i))
        && record.filter_count() == graph.filter_count();
    if !consistent {
        return Err(FadsError::InvalidArgument(
            "activation record was not produced by this graph".into(),
        ));
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; n];
    for (filter, seed) in seeds {
        if *filter >= record.filter_count() {
            return Err(FadsError::InvalidArgument(format!("filter index {filter} out of range")));
        }
        let map = &record.filter_maps[*filter];
        if seed.shape() != map.shape() {
            return Err(FadsError::Dimension {
                op: "gradient seed",
                left: seed.shape().to_vec(),
                right: map.shape().to_vec(),
            });
        }
        let (layer, channel) = record.filter_origin[*filter];
        let pre = &record.outputs[layer];
        let plane = map.numel();
        let slot = grads[layer].get_or_insert_with(|| Tensor::zeros(pre.shape()));
        let dst = &mut slot.data_mut()[channel * plane..(channel + 1) * plane];
        let pre_vals = &pre.data()[channel * plane..(channel + 1) * plane];
        for ((d, &g), &x) in dst.iter_mut().zip(seed.data()).zip(pre_vals) {
            *d += match record.tap {
                TapPoint::Pre => g,
                TapPoint::Post => ops::relu_grad(x, g, mode),
            };
        }
    }

    let mut input_grad: Option<Tensor> = None;
    for i in (0..n).rev() {
        let Some(g) = grads[i].take() else { continue };
        let layer = &graph.layers()[i];
        let id = layer.id.as_str();
        let srcs = graph.sources(i);
        let x = record.source(srcs[0]);
        let back: Vec<Tensor> = in_layer(id, (|| match layer.kind {
            LayerKind::Conv2d { stride, pad, .. } => {
                let kernel = weights.get(id, "kernel")?;
                ops::conv2d_backward_input(&g, kernel, x.shape(), stride, pad).map(|t| vec![t])
            }
            LayerKind::Relu => ops::relu_backward(x, &g, mode).map(|t| vec![t]),
            LayerKind::Maxpool { .. } => {
                let arg = record.argmax(i).ok_or_else(|| FadsError::InvalidArgument("missing argmax cache".into()))?;
                ops::maxpool_backward(&g, arg, x.shape()).map(|t| vec![t])
            }
            LayerKind::Batchnorm { eps } => ops::batchnorm_backward(&g, &bn_params(weights, id, eps)?).map(|t| vec![t]),
            LayerKind::Add => Ok(vec![g.clone(), g]),
            LayerKind::Gap => ops::global_avg_pool_backward(&g, x.shape()).map(|t| vec![t]),
            LayerKind::Flatten => g.reshape(x.shape()).map(|t| vec![t]),
            LayerKind::Dense { .. } => {
                let w = weights.get(id, "weight")?;
                ops::dense_backward(&g, w).map(|t| vec![t])
            }
        })())?;
        for (src, gi) in srcs.iter().zip(back) {
            match *src {
                Source::Input => accumulate(&mut input_grad, gi)?,
                Source::Layer(j) => accumulate(&mut grads[j], gi)?,
            }
        }
    }
    Ok(input_grad.unwrap_or_else(|| Tensor::zeros(record.input.shape())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LayerSpec;
    use crate::refnet::make_reference_net;

    fn identity_net() -> (NetworkGraph, WeightStore) {
        let g = NetworkGraph::new(
            "identity",
            [1, 4, 4],
            vec![
                LayerSpec::new("c", LayerKind::Conv2d { out: 1, kh: 1, kw: 1, stride: 1, pad: 0 }),
                LayerSpec::new("r", LayerKind::Relu),
            ],
        )
        .unwrap();
        let mut w = WeightStore::new();
        w.insert("c", "kernel", Tensor::filled(&[1, 1, 1, 1], 1.0));
        w.insert("c", "bias", Tensor::zeros(&[1]));
        (g, w)
    }

    #[test]
    fn identity_graph_records_image() {
        let (g, w) = identity_net();
        let img = Tensor::new(vec![1, 4, 4], (0..16).map(|v| v as f32 * 0.5).collect()).unwrap();
        let rec = forward(&g, &w, &img, TapPoint::Pre).unwrap();
        assert_eq!(rec.filter_maps().len(), 1);
        assert_eq!(rec.filter_maps()[0].data(), img.data());
        assert_eq!(rec.final_output(), &img);
    }

    #[test]
    fn reference_net_counts_filters() {
        let (g, w) = make_reference_net(42);
        let img = Tensor::filled(&[1, 64, 64], 0.3);
        let rec = forward(&g, &w, &img, TapPoint::Pre).unwrap();
        assert_eq!(rec.filter_count(), 32);
        assert_eq!(rec.filter_origin(8), (3, 0));
        assert_eq!(rec.filter_maps()[31].shape(), &[16, 16]);
    }

    #[test]
    fn zero_image_gives_zero_maps() {
        let (g, w) = make_reference_net(9);
        let rec = forward(&g, &w, &Tensor::zeros(&[1, 64, 64]), TapPoint::Pre).unwrap();
        assert!(rec.filter_maps().iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn input_mismatch_is_named() {
        let (g, w) = identity_net();
        let err = forward(&g, &w, &Tensor::zeros(&[1, 5, 4]), TapPoint::Pre).unwrap_err();
        assert!(err.to_string().contains("input"));
    }

    #[test]
    fn missing_weight_names_layer() {
        let (g, _) = identity_net();
        let err = forward(&g, &WeightStore::new(), &Tensor::zeros(&[1, 4, 4]), TapPoint::Pre).unwrap_err();
        assert!(err.to_string().contains("`c`"), "{err}");
    }

    #[test]
    fn identity_backward_passes_seed() {
        let (g, w) = identity_net();
        let img = Tensor::filled(&[1, 4, 4], 1.0);
        let rec = forward(&g, &w, &img, TapPoint::Pre).unwrap();
        let seed = Tensor::new(vec![4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let grad = backward(&rec, &g, &w, &[(0, seed.clone())], GradMode::Guided).unwrap();
        assert_eq!(grad.data(), seed.data());
    }

    #[test]
    fn backward_rejects_foreign_record() {
        let (g, w) = identity_net();
        let (rg, rw) = make_reference_net(1);
        let rec = forward(&rg, &rw, &Tensor::zeros(&[1, 64, 64]), TapPoint::Pre).unwrap();
        assert!(backward(&rec, &g, &w, &[], GradMode::Vanilla).is_err());
    }
}
