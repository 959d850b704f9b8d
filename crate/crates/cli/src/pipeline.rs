//! Shared steps: building member networks, fitting an ensemble, and
//! writing or reading a model directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fads::model::{ensemble_fit, EnsembleModel, FadsModel, Network};
use fads::persist::{write_json, EnsembleFile, EnsembleMemberFile, ModelFile, NetworkCache, FORMAT_VERSION};
use fads::Tensor;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::fail::{data_error, Classify, CliResult};

pub struct Member {
    pub graph_path: PathBuf,
    pub weights_path: PathBuf,
    pub network: Network,
}

/// Loads every configured member's graph (re-bound to its input size) and
/// weights. Failures here are configuration errors.
pub fn load_members(cfg: &RunConfig) -> CliResult<Vec<Member>> {
    cfg.require_members().usage()?;
    let mut cache = NetworkCache::default();
    cfg.members
        .iter()
        .enumerate()
        .map(|(z, m)| {
            let graph_path = cfg.resolve(&m.graph);
            let weights_path = cfg.resolve(&m.weights);
            let network = cache
                .network(&graph_path, &weights_path, m.input_size)
                .with_context(|| format!("member {z} ({} + {})", graph_path.display(), weights_path.display()))
                .usage()?;
            Ok(Member { graph_path, weights_path, network })
        })
        .collect()
}

/// Fits one model per member on `images` and normalises the ensemble on
/// the same images.
pub fn fit_ensemble(cfg: &RunConfig, members: &[Member], images: &[Tensor]) -> CliResult<EnsembleModel> {
    if images.len() < 2 {
        return Err(data_error(format!("fitting needs at least 2 nominal images, got {}", images.len())));
    }
    let mut fitted = Vec::with_capacity(members.len());
    for (z, m) in members.iter().enumerate() {
        let net = &m.network;
        let prepared = images
            .par_iter()
            .map(|img| net.prepare(img))
            .collect::<fads::Result<Vec<_>>>()
            .with_context(|| format!("member {z}"))
            .data()?;
        let model = FadsModel::fit(&prepared, &net.graph, &net.weights, cfg.fit_options())
            .with_context(|| format!("fitting member {z}"))
            .data()?;
        fitted.push((model, net.clone()));
    }
    let training = vec![images; members.len()];
    ensemble_fit(fitted, &training, cfg.scoring).data()
}

/// Writes `ensemble.json`, one `member-NN.json` per member and a copy of
/// every distinct network, so the directory is self-contained.
pub fn write_model_dir(dir: &Path, members: &[Member], ensemble: &EnsembleModel) -> CliResult<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).data()?;
    let mut copies: BTreeMap<(PathBuf, PathBuf), usize> = BTreeMap::new();
    let mut files = Vec::with_capacity(members.len());
    for (z, (m, em)) in members.iter().zip(&ensemble.members).enumerate() {
        let next = copies.len();
        let k = *copies.entry((m.graph_path.clone(), m.weights_path.clone())).or_insert(next);
        let (graph_file, weights_file) = (format!("net-{k:02}.json"), format!("net-{k:02}.fadsw"));
        if k == next {
            copy(&m.graph_path, &dir.join(&graph_file))?;
            copy(&m.weights_path, &dir.join(&weights_file))?;
        }
        let model_file = format!("member-{z:02}.json");
        write_json(&ModelFile::new(&em.model, ensemble.scoring, &graph_file, &weights_file), dir.join(&model_file))
            .data()?;
        files.push(EnsembleMemberFile { model_file, normalizers: em.normalizers });
    }
    let file = EnsembleFile { version: FORMAT_VERSION, scoring: ensemble.scoring, members: files };
    write_json(&file, dir.join("ensemble.json")).data()
}

fn copy(from: &Path, to: &Path) -> CliResult<()> {
    std::fs::copy(from, to)
        .with_context(|| format!("copying {} to {}", from.display(), to.display()))
        .data()?;
    Ok(())
}

/// Scores every image, preserving order.
pub fn score_all(ensemble: &EnsembleModel, images: &[Tensor]) -> fads::Result<Vec<f64>> {
    images.par_iter().map(|img| ensemble.score(img)).collect()
}

/// File-name-safe stem for an (id, view) pair.
pub fn stem(id: &str, view: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
            .collect()
    };
    if view.is_empty() {
        clean(id)
    } else {
        format!("{}__{}", clean(id), clean(view))
    }
}
