//! JSON model and ensemble files.
//!
//! A model file carries the fitted statistics and names the graph and
//! weight files it was fitted against; relative paths resolve against the
//! model file's directory. An ensemble file lists member model files with
//! their normalisers.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::TapPoint;
use crate::error::{FadsError, Result};
use crate::graph::load_graph;
use crate::model::{AggregationKind, EnsembleMember, EnsembleModel, FadsModel, Network, Normalizers, ScoreMethod};
use crate::weights::{load_weights, WeightStore};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub agg: AggregationKind,
    pub scoring: ScoreMethod,
    #[serde(default)]
    pub tap: TapPoint,
    pub input_size: [usize; 3],
    pub graph_name: String,
    pub graph_file: String,
    pub weights_file: String,
    pub n_train: usize,
    pub sigma_floor: f64,
    pub filter_mean: Vec<f64>,
    pub filter_std: Vec<f64>,
}

impl ModelFile {
    pub fn new(model: &FadsModel, scoring: ScoreMethod, graph_file: &str, weights_file: &str) -> Self {
        Self {
            version: FORMAT_VERSION,
            agg: model.agg,
            scoring,
            tap: model.tap,
            input_size: model.input_size,
            graph_name: model.graph_name.clone(),
            graph_file: graph_file.to_string(),
            weights_file: weights_file.to_string(),
            n_train: model.n_train,
            sigma_floor: model.sigma_floor,
            filter_mean: model.filter_mean.clone(),
            filter_std: model.filter_std.clone(),
        }
    }

    pub fn model(&self) -> FadsModel {
        FadsModel {
            agg: self.agg,
            tap: self.tap,
            input_size: self.input_size,
            graph_name: self.graph_name.clone(),
            n_train: self.n_train,
            sigma_floor: self.sigma_floor,
            filter_mean: self.filter_mean.clone(),
            filter_std: self.filter_std.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMemberFile {
    pub model_file: String,
    pub normalizers: Normalizers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub version: u32,
    pub scoring: ScoreMethod,
    pub members: Vec<EnsembleMemberFile>,
}

fn check_version(v: u32, what: &str) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(FadsError::InvalidArgument(format!("{what} version {v} is not supported")));
    }
    Ok(())
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("model serialisation is infallible") + "\n"
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_canonical_json(value)).map_err(|e| FadsError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FadsError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parent(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

/// Loads graphs and weights, sharing weight stores across members that
/// reference the same file.
#[derive(Default)]
pub struct NetworkCache {
    weights: HashMap<PathBuf, Arc<WeightStore>>,
}

impl NetworkCache {
    pub fn network(&mut self, graph_path: &Path, weights_path: &Path, input: [usize; 3]) -> Result<Network> {
        let graph = load_graph(graph_path)?.with_input(input)?;
        let weights = match self.weights.get(weights_path) {
            Some(w) => {
                w.validate(&graph)?;
                Arc::clone(w)
            }
            None => {
                let w = Arc::new(load_weights(weights_path, &graph)?);
                self.weights.insert(weights_path.to_path_buf(), Arc::clone(&w));
                w
            }
        };
        Network::new(graph, weights)
    }
}

/// Reads a model file and the network it is bound to.
pub fn load_model(path: impl AsRef<Path>, cache: &mut NetworkCache) -> Result<(ModelFile, Network)> {
    let path = path.as_ref();
    let file: ModelFile = read_json(path)?;
    check_version(file.version, "model file")?;
    let model = file.model();
    model.validate()?;
    let base = parent(path);
    let network = cache.network(
        &resolve(base, &file.graph_file),
        &resolve(base, &file.weights_file),
        file.input_size,
    )?;
    model.check_binding(&network.graph)?;
    Ok((file, network))
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<EnsembleModel> {
    let path = path.as_ref();
    let file: EnsembleFile = read_json(path)?;
    check_version(file.version, "ensemble file")?;
    let base = parent(path);
    let mut cache = NetworkCache::default();
    let members = file
        .members
        .iter()
        .map(|m| {
            let (mf, network) = load_model(resolve(base, &m.model_file), &mut cache)?;
            Ok(EnsembleMember { model: mf.model(), network, normalizers: m.normalizers })
        })
        .collect::<Result<Vec<_>>>()?;
    let ensemble = EnsembleModel { members, scoring: file.scoring };
    ensemble.validate()?;
    Ok(ensemble)
}
