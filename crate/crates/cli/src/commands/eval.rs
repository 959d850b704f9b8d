use std::collections::BTreeMap;
use std::process::ExitCode;

use fads::eval::{part_stats, roc_auc, stratified_kfold, FoldItem, LabeledScores, PartScore};
use fads::persist::write_json;
use fads::{Label, Tensor};
use serde::Serialize;

use super::{create_out, csv_writer, load_config};
use crate::fail::{data_error, usage_error, Classify, CliResult};
use crate::manifest::Manifest;
use crate::pipeline::{fit_ensemble, load_members, score_all};
use crate::EvalArgs;

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    train_images: usize,
    test_parts: usize,
    test_anomalous: usize,
    /// Part-level AUC; absent when the test side holds a single class.
    auc: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    seed: u64,
    k: usize,
    agg: fads::AggregationKind,
    scoring: fads::ScoreMethod,
    parts: usize,
    images: usize,
    folds: Vec<FoldSummary>,
    /// Mean of the defined per-fold AUCs.
    mean_auc: Option<f64>,
    /// AUC of all test parts pooled across folds.
    pooled_auc: Option<f64>,
}

struct Part {
    stratum: String,
    label: Label,
    views: Vec<usize>,
}

/// Groups manifest rows by id. Every row needs a label and all views of an
/// id must agree on label and stratum.
fn parts(manifest: &Manifest) -> CliResult<BTreeMap<String, Part>> {
    let mut parts: BTreeMap<String, Part> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let label = e
            .label
            .ok_or_else(|| data_error(format!("`{}` ({}) has no label; eval needs labelled data", e.id, e.view)))?;
        let part = parts
            .entry(e.id.clone())
            .or_insert_with(|| Part { stratum: e.stratum.clone(), label, views: Vec::new() });
        if part.label != label || part.stratum != e.stratum {
            return Err(data_error(format!("views of `{}` disagree on label or stratum", e.id)));
        }
        part.views.push(i);
    }
    Ok(parts)
}

fn auc_of(stats: &[(PartScore, Label)]) -> CliResult<Option<f64>> {
    let scores = LabeledScores::from_pairs(stats.iter().map(|(p, l)| (p.mean, *l)));
    let (n, a) = scores.counts();
    if n == 0 || a == 0 {
        return Ok(None);
    }
    Ok(Some(roc_auc(&scores).data()?.auc))
}

/// Writes `scores.csv` (per image), `parts.csv` (per tested part),
/// `folds.csv` and `summary.json`.
pub fn run(args: &EvalArgs) -> CliResult<ExitCode> {
    let cfg = load_config(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let k = args.folds.unwrap_or(cfg.folds);
    if k < 2 {
        return Err(usage_error("--folds must be at least 2"));
    }
    let members = load_members(&cfg)?;
    let manifest = Manifest::load(&args.manifest).data()?;
    let parts = parts(&manifest)?;
    let items: Vec<FoldItem> = parts
        .iter()
        .map(|(id, p)| FoldItem { id: id.clone(), stratum: p.stratum.clone(), label: p.label })
        .collect();
    let plan = stratified_kfold(&items, k, seed).data()?;
    let images = manifest.load_images(cfg.grayscale).data()?;

    create_out(&args.out)?;
    let mut image_rows = csv_writer(&args.out.join("scores.csv"))?;
    image_rows.write_record(["id", "view", "score", "label", "fold"]).data()?;
    let mut part_rows = csv_writer(&args.out.join("parts.csv"))?;
    part_rows.write_record(["id", "stratum", "label", "fold", "views", "mean", "std"]).data()?;

    let mut folds = Vec::with_capacity(k);
    let mut pooled = Vec::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let train: Vec<Tensor> = fold
            .train
            .iter()
            .flat_map(|id| parts[id].views.iter().map(|&i| images[i].clone()))
            .collect();
        let ensemble = fit_ensemble(&cfg, &members, &train)?;

        let test_views: Vec<usize> = fold.test.iter().flat_map(|id| parts[id].views.iter().copied()).collect();
        let test_images: Vec<Tensor> = test_views.iter().map(|&i| images[i].clone()).collect();
        let scores = score_all(&ensemble, &test_images).data()?;
        let by_index: BTreeMap<usize, f64> = test_views.iter().copied().zip(scores).collect();

        let mut stats = Vec::with_capacity(fold.test.len());
        for id in &fold.test {
            let part = &parts[id];
            let views: Vec<f64> = part.views.iter().map(|i| by_index[i]).collect();
            for &i in &part.views {
                let e = &manifest.entries[i];
                image_rows
                    .write_record([e.id.as_str(), &e.view, &by_index[&i].to_string(), part.label.as_str(), &f.to_string()])
                    .data()?;
            }
            let s = part_stats(id, &views).data()?;
            part_rows
                .write_record([
                    id.as_str(),
                    &part.stratum,
                    part.label.as_str(),
                    &f.to_string(),
                    &s.views.to_string(),
                    &s.mean.to_string(),
                    &s.std.to_string(),
                ])
                .data()?;
            stats.push((s, part.label));
        }
        folds.push(FoldSummary {
            fold: f,
            train_images: train.len(),
            test_parts: fold.test.len(),
            test_anomalous: stats.iter().filter(|(_, l)| l.is_anomaly()).count(),
            auc: auc_of(&stats)?,
        });
        pooled.extend(stats);
    }
    image_rows.flush().data()?;
    part_rows.flush().data()?;

    let mut fold_rows = csv_writer(&args.out.join("folds.csv"))?;
    fold_rows.write_record(["fold", "train_images", "test_parts", "test_anomalous", "auc"]).data()?;
    for s in &folds {
        let auc = s.auc.map_or(String::new(), |a| a.to_string());
        fold_rows
            .write_record([
                s.fold.to_string(),
                s.train_images.to_string(),
                s.test_parts.to_string(),
                s.test_anomalous.to_string(),
                auc,
            ])
            .data()?;
    }
    fold_rows.flush().data()?;

    let defined: Vec<f64> = folds.iter().filter_map(|s| s.auc).collect();
    let mean_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let summary = Summary {
        seed,
        k,
        agg: cfg.agg,
        scoring: cfg.scoring,
        parts: parts.len(),
        images: images.len(),
        folds,
        mean_auc,
        pooled_auc: auc_of(&pooled)?,
    };
    write_json(&summary, args.out.join("summary.json")).data()?;
    match summary.mean_auc {
        Some(m) => println!("{k}-fold mean AUC {m:.4} over {} part(s)", summary.parts),
        None => println!("{k}-fold run finished; no fold had both classes in its test set"),
    }
    Ok(ExitCode::SUCCESS)
}
