//! Portable JSON network description and its validation.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FadsError, Result};
use crate::ops::{conv_output_size, pool_output_size};

/// Reserved layer id that refers to the network input.
pub const INPUT_ID: &str = "input";

fn default_one() -> usize {
    1
}

fn default_bn_eps() -> f32 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d {
        out: usize,
        kh: usize,
        kw: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
    Relu,
    Maxpool {
        window: usize,
        stride: usize,
    },
    Batchnorm {
        #[serde(default = "default_bn_eps")]
        eps: f32,
    },
    Add,
    Gap,
    Flatten,
    Dense {
        out: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool { .. } => "maxpool",
            LayerKind::Batchnorm { .. } => "batchnorm",
            LayerKind::Add => "add",
            LayerKind::Gap => "gap",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Producer ids; empty means "the previous layer" (or the input for the first layer).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            id: id.into(),
            kind,
            inputs: Vec::new(),
        }
    }

    pub fn with_inputs(mut self, inputs: &[&str]) -> Self {
        self.inputs = inputs.iter().map(|s| s.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub name: String,
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Where a layer reads one of its operands from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Input,
    Layer(usize),
}

/// A validated network: layers in topological order with resolved
/// producers and propagated shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    name: String,
    input: [usize; 3],
    layers: Vec<LayerSpec>,
    sources: Vec<Vec<Source>>,
    shapes: Vec<Vec<usize>>,
    /// `(layer index, first global filter index)` for every conv layer.
    conv_offsets: Vec<(usize, usize)>,
    filter_count: usize,
}

impl NetworkGraph {
    pub fn new(name: impl Into<String>, input: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let name = name.into();
        if input.contains(&0) {
            return Err(FadsError::Graph(format!("input extents must be positive, got {input:?}")));
        }
        if layers.is_empty() {
            return Err(FadsError::Graph("graph has no layers".into()));
        }

        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut sources = Vec::with_capacity(layers.len());
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
        let mut consumed = vec![false; layers.len()];

        for (i, layer) in layers.iter().enumerate() {
            if layer.id.is_empty() || layer.id == INPUT_ID || layer.id.contains('.') {
                return Err(FadsError::layer(&layer.id, "layer id must be non-empty, not `input`, and contain no `.`"));
            }
            if index.contains_key(layer.id.as_str()) {
                return Err(FadsError::layer(&layer.id, "duplicate layer id"));
            }

            let srcs: Vec<Source> = if layer.inputs.is_empty() {
                vec![if i == 0 { Source::Input } else { Source::Layer(i - 1) }]
            } else {
                layer
                    .inputs
                    .iter()
                    .map(|r| {
                        if r == INPUT_ID {
                            Ok(Source::Input)
                        } else if let Some(&j) = index.get(r.as_str()) {
                            Ok(Source::Layer(j))
                        } else if layers.iter().any(|l| &l.id == r) {
                            Err(FadsError::layer(&layer.id, format!("input `{r}` is not an earlier layer (graph must be a DAG in declaration order)")))
                        } else {
                            Err(FadsError::layer(&layer.id, format!("unknown input `{r}`")))
                        }
                    })
                    .collect::<Result<_>>()?
            };
            let expected_arity = if matches!(layer.kind, LayerKind::Add) { 2 } else { 1 };
            if srcs.len() != expected_arity {
                return Err(FadsError::layer(
                    &layer.id,
                    format!("{} takes exactly {expected_arity} input(s), got {}", layer.kind.name(), srcs.len()),
                ));
            }
            for s in &srcs {
                if let Source::Layer(j) = s {
                    consumed[*j] = true;
                }
            }
            let in_shapes: Vec<&[usize]> = srcs
                .iter()
                .map(|s| match s {
                    Source::Input => &input[..],
                    Source::Layer(j) => shapes[*j].as_slice(),
                })
                .collect();
            let out = infer_shape(layer, &in_shapes)?;
            index.insert(layer.id.as_str(), i);
            sources.push(srcs);
            shapes.push(out);
        }

        let last = layers.len() - 1;
        if let Some(dangling) = consumed[..last].iter().position(|c| !c) {
            return Err(FadsError::layer(
                &layers[dangling].id,
                "output is never consumed; the graph must have a single output layer",
            ));
        }

        let mut conv_offsets = Vec::new();
        let mut filter_count = 0;
        for (i, layer) in layers.iter().enumerate() {
            if let LayerKind::Conv2d { out, .. } = layer.kind {
                conv_offsets.push((i, filter_count));
                filter_count += out;
            }
        }

        Ok(Self {
            name,
            input,
            layers,
            sources,
            shapes,
            conv_offsets,
            filter_count,
        })
    }

    pub fn from_file(file: GraphFile) -> Result<Self> {
        Self::new(file.name, file.input, file.layers)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            name: self.name.clone(),
            input: self.input,
            layers: self.layers.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| FadsError::GraphParse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("graph serialisation is infallible")
    }

    /// The same topology re-validated for a different input size.
    pub fn with_input(&self, input: [usize; 3]) -> Result<Self> {
        if input == self.input {
            return Ok(self.clone());
        }
        Self::new(self.name.clone(), input, self.layers.clone())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input(&self) -> [usize; 3] {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn sources(&self, layer: usize) -> &[Source] {
        &self.sources[layer]
    }

    pub fn output_shape(&self, layer: usize) -> &[usize] {
        &self.shapes[layer]
    }

    /// Total number of convolutional filters across all conv layers.
    pub fn filter_count(&self) -> usize {
        self.filter_count
    }

    pub fn conv_offsets(&self) -> &[(usize, usize)] {
        &self.conv_offsets
    }

    /// Parameters every layer requires, as `(name, shape)`.
    pub fn required_parameters(&self) -> Vec<(String, Vec<usize>)> {
        let mut params = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let in_channels = match self.sources[i][0] {
                Source::Input => self.input[0],
                Source::Layer(j) => self.shapes[j][0],
            };
            let id = &layer.id;
            match layer.kind {
                LayerKind::Conv2d { out, kh, kw, .. } => {
                    push_param(&mut params, id, "kernel", vec![out, in_channels, kh, kw]);
                    push_param(&mut params, id, "bias", vec![out]);
                }
                LayerKind::Batchnorm { .. } => {
                    for p in ["mean", "var", "gamma", "beta"] {
                        push_param(&mut params, id, p, vec![in_channels]);
                    }
                }
                LayerKind::Dense { out } => {
                    push_param(&mut params, id, "weight", vec![out, in_channels]);
                    push_param(&mut params, id, "bias", vec![out]);
                }
                _ => {}
            }
        }
        params
    }
}

fn push_param(params: &mut Vec<(String, Vec<usize>)>, layer: &str, param: &str, shape: Vec<usize>) {
    params.push((format!("{layer}.{param}"), shape));
}

fn infer_shape(layer: &LayerSpec, inputs: &[&[usize]]) -> Result<Vec<usize>> {
    let err = |msg: String| FadsError::layer(&layer.id, msg);
    let x = inputs[0];
    let chw = || -> Result<(usize, usize, usize)> {
        match x {
            [c, h, w] => Ok((*c, *h, *w)),
            _ => Err(err(format!("{} expects a [C,H,W] input, got {x:?}", layer.kind.name()))),
        }
    };
    match layer.kind {
        LayerKind::Conv2d { out, kh, kw, stride, pad } => {
            let (_, h, w) = chw()?;
            if out == 0 || kh == 0 || kw == 0 || stride == 0 {
                return Err(err("conv2d out, kh, kw and stride must be positive".into()));
            }
            let (oh, ow) = conv_output_size((h, w), (kh, kw), stride, pad)
                .ok_or_else(|| err(format!("conv2d {kh}x{kw} pad {pad} does not fit input {x:?}")))?;
            Ok(vec![out, oh, ow])
        }
        LayerKind::Maxpool { window, stride } => {
            let (c, h, w) = chw()?;
            if stride == 0 {
                return Err(err("maxpool stride must be positive".into()));
            }
            let (oh, ow) = pool_output_size((h, w), window, stride)
                .ok_or_else(|| err(format!("maxpool window {window} larger than input {x:?}")))?;
            Ok(vec![c, oh, ow])
        }
        LayerKind::Batchnorm { eps } => {
            chw()?;
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(err("batchnorm eps must be finite and non-negative".into()));
            }
            Ok(x.to_vec())
        }
        LayerKind::Relu => Ok(x.to_vec()),
        LayerKind::Add => {
            if inputs[0] != inputs[1] {
                return Err(err(format!("add operands differ: {:?} vs {:?}", inputs[0], inputs[1])));
            }
            Ok(x.to_vec())
        }
        LayerKind::Gap => {
            let (c, _, _) = chw()?;
            Ok(vec![c])
        }
        LayerKind::Flatten => Ok(vec![x.iter().product()]),
        LayerKind::Dense { out } => {
            if x.len() != 1 {
                return Err(err(format!("dense expects a flat input, got {x:?}")));
            }
            if out == 0 {
                return Err(err("dense out must be positive".into()));
            }
            Ok(vec![out])
        }
    }
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<NetworkGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FadsError::io(path, e))?;
    NetworkGraph::from_json(&text)
}

pub fn save_graph(graph: &NetworkGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, graph.to_json() + "\n").map_err(|e| FadsError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_graph_filter_count() {
        let g = NetworkGraph::from_json(
            r#"{"name":"tiny","input":[1,8,8],"layers":[
                {"id":"c1","kind":"conv2d","out":4,"kh":3,"kw":3,"stride":1,"pad":1},
                {"id":"r1","kind":"relu"}]}"#,
        )
        .unwrap();
        assert_eq!(g.filter_count(), 4);
        assert_eq!(g.output_shape(1), &[4, 8, 8]);
    }

    #[test]
    fn residual_forward_reference_is_rejected() {
        let err = NetworkGraph::from_json(
            r#"{"name":"bad","input":[1,8,8],"layers":[
                {"id":"c1","kind":"conv2d","out":2,"kh":3,"kw":3,"pad":1},
                {"id":"sum","kind":"add","inputs":["c1","c2"]},
                {"id":"c2","kind":"conv2d","out":2,"kh":3,"kw":3,"pad":1}]}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sum") && msg.contains("DAG"), "{msg}");
    }

    #[test]
    fn parse_error_reports_line() {
        let err = NetworkGraph::from_json("{\n\"name\": \"x\",\n\"input\": [1,2,\n").unwrap_err();
        match err {
            FadsError::GraphParse { line, .. } => assert!(line >= 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_is_load_error() {
        let err = NetworkGraph::from_json(
            r#"{"name":"x","input":[1,4,4],"layers":[{"id":"a","kind":"softmax"}]}"#,
        );
        assert!(matches!(err, Err(FadsError::GraphParse { .. })));
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let err = NetworkGraph::from_json(
            r#"{"name":"x","input":[1,4,4],"layers":[
                {"id":"c","kind":"conv2d","out":1,"kh":5,"kw":5},
                {"id":"r","kind":"relu"}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("`c`"));
    }

    #[test]
    fn residual_block_validates() {
        let layers = vec![
            LayerSpec::new("c1", LayerKind::Conv2d { out: 2, kh: 3, kw: 3, stride: 1, pad: 1 }),
            LayerSpec::new("b1", LayerKind::Batchnorm { eps: 1e-5 }),
            LayerSpec::new("r1", LayerKind::Relu),
            LayerSpec::new("c2", LayerKind::Conv2d { out: 2, kh: 3, kw: 3, stride: 1, pad: 1 }),
            LayerSpec::new("sum", LayerKind::Add).with_inputs(&["c2", "c1"]),
            LayerSpec::new("gap", LayerKind::Gap),
            LayerSpec::new("fc", LayerKind::Dense { out: 3 }),
        ];
        let g = NetworkGraph::new("res", [1, 6, 6], layers).unwrap();
        assert_eq!(g.filter_count(), 4);
        assert_eq!(g.output_shape(6), &[3]);
        assert_eq!(g.conv_offsets(), &[(0, 0), (3, 2)]);
    }

    #[test]
    fn dangling_layer_rejected() {
        let layers = vec![
            LayerSpec::new("c1", LayerKind::Conv2d { out: 2, kh: 1, kw: 1, stride: 1, pad: 0 }),
            LayerSpec::new("c2", LayerKind::Conv2d { out: 2, kh: 1, kw: 1, stride: 1, pad: 0 }).with_inputs(&["input"]),
        ];
        assert!(NetworkGraph::new("x", [1, 2, 2], layers).is_err());
    }
}
