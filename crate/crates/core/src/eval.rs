//! ROC analysis and the stratified k-fold protocol.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{FadsError, Result};
use crate::localize::SaliencyMap;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Nominal,
    Anomaly,
}

impl Label {
    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }

    /// Accepts `0`/`1`, `nominal`/`anomaly` (and `good`/`bad`); empty means unlabelled.
    pub fn parse(s: &str) -> Result<Option<Label>> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" => Ok(None),
            "0" | "nominal" | "good" | "normal" => Ok(Some(Label::Nominal)),
            "1" | "anomaly" | "anomalous" | "bad" => Ok(Some(Label::Anomaly)),
            other => Err(FadsError::InvalidArgument(format!("unknown label `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Nominal => "nominal",
            Label::Anomaly => "anomaly",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub score: f64,
    pub label: Label,
    pub id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    pub items: Vec<ScoredItem>,
}

impl LabeledScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, score: f64, label: Label, id: impl Into<String>) {
        self.items.push(ScoredItem { score, label, id: id.into() });
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, Label)>) -> Self {
        Self {
            items: pairs
                .into_iter()
                .enumerate()
                .map(|(i, (score, label))| ScoredItem { score, label, id: i.to_string() })
                .collect(),
        }
    }

    pub fn counts(&self) -> (usize, usize) {
        let pos = self.items.iter().filter(|i| i.label.is_anomaly()).count();
        (pos, self.items.len() - pos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub auc: f64,
    /// `(false positive rate, true positive rate)` from `(0,0)` to `(1,1)`,
    /// one point per distinct threshold.
    pub points: Vec<(f64, f64)>,
}

/// AUC as the Mann-Whitney statistic with ties counted one half, plus the
/// ROC curve. Anomalies are the positive class; higher scores mean more
/// anomalous.
pub fn roc_auc(scores: &LabeledScores) -> Result<RocCurve> {
    let (n_pos, n_neg) = scores.counts();
    if n_pos == 0 || n_neg == 0 {
        return Err(FadsError::InvalidArgument(format!(
            "AUC needs both classes, got {n_pos} anomalies and {n_neg} nominals"
        )));
    }
    if scores.items.iter().any(|i| !i.score.is_finite()) {
        return Err(FadsError::InvalidArgument("scores must be finite".into()));
    }
    let mut sorted: Vec<(f64, bool)> = scores.items.iter().map(|i| (i.score, i.label.is_anomaly())).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    // Walk thresholds from high to low; each tie group contributes its
    // positives times the negatives strictly below, plus half the tied pairs.
    let mut twice_concordant: u64 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut points = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 { gp += 1 } else { gn += 1 }
            j += 1;
        }
        let neg_below = n_neg as u64 - fp - gn;
        twice_concordant += 2 * gp * neg_below + gp * gn;
        tp += gp;
        fp += gn;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j;
    }
    let auc = twice_concordant as f64 / (2 * n_pos as u64 * n_neg as u64) as f64;
    Ok(RocCurve { auc, points })
}

/// Pools every pixel of every map into one ROC analysis against the
/// matching binary ground-truth masks.
pub fn pixel_roc_auc(maps: &[SaliencyMap], ground_truth: &[Vec<bool>]) -> Result<f64> {
    if maps.len() != ground_truth.len() {
        return Err(FadsError::InvalidArgument(format!(
            "{} maps but {} masks",
            maps.len(),
            ground_truth.len()
        )));
    }
    let mut scores = LabeledScores::new();
    for (k, (map, gt)) in maps.iter().zip(ground_truth).enumerate() {
        if map.values.len() != gt.len() {
            return Err(FadsError::Dimension {
                op: "pixel ROC",
                left: vec![map.height, map.width],
                right: vec![gt.len()],
            });
        }
        for (p, (&v, &g)) in map.values.iter().zip(gt).enumerate() {
            let label = if g { Label::Anomaly } else { Label::Nominal };
            scores.items.push(ScoredItem { score: v as f64, label, id: format!("{k}:{p}") });
        }
    }
    Ok(roc_auc(&scores)?.auc)
}

/// One id's fold assignment inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldItem {
    pub id: String,
    pub stratum: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
    pub strata: BTreeMap<String, String>,
}

/// Stratified k-fold split for unsupervised detection.
///
/// Within every `(stratum, label)` group (strata in sorted order, nominal
/// before anomaly) ids are shuffled and dealt round-robin to the test side of
/// the folds, continuing from wherever the previous group stopped. Each
/// fold trains on the nominal ids outside its test set; anomalies are only
/// ever tested.
pub fn stratified_kfold(items: &[FoldItem], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(FadsError::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let mut seen = BTreeSet::new();
    for it in items {
        if !seen.insert(it.id.as_str()) {
            return Err(FadsError::InvalidArgument(format!("duplicate id `{}`", it.id)));
        }
    }
    let nominal = items.iter().filter(|i| !i.label.is_anomaly()).count();
    if k > nominal {
        return Err(FadsError::InvalidArgument(format!(
            "k = {k} exceeds the {nominal} nominal ids available"
        )));
    }

    let mut groups: BTreeMap<(&str, Label), Vec<&str>> = BTreeMap::new();
    for it in items {
        groups.entry((it.stratum.as_str(), it.label)).or_default().push(it.id.as_str());
    }
    let mut rng = SplitMix64::new(seed);
    let mut test_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut next = 0usize;
    for ids in groups.values_mut() {
        ids.sort_unstable();
        rng.shuffle(ids);
        for id in ids.iter() {
            test_of.insert(id, next % k);
            next += 1;
        }
    }

    let folds = (0..k)
        .map(|f| {
            let mut fold = Fold { train: Vec::new(), test: Vec::new() };
            for it in items {
                if test_of[it.id.as_str()] == f {
                    fold.test.push(it.id.clone());
                } else if !it.label.is_anomaly() {
                    fold.train.push(it.id.clone());
                }
            }
            fold
        })
        .collect();
    let strata = items.iter().map(|i| (i.id.clone(), i.stratum.clone())).collect();
    Ok(FoldPlan { k, folds, strata })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartScore {
    pub part: String,
    pub mean: f64,
    pub std: f64,
    pub views: usize,
}

/// Mean and population standard deviation of the scores of each part's views.
pub fn per_part_score<'a>(scores: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Vec<PartScore>> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (part, s) in scores {
        groups.entry(part).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(part, v)| part_stats(part, &v))
        .collect()
}

pub fn part_stats(part: &str, views: &[f64]) -> Result<PartScore> {
    if views.is_empty() {
        return Err(FadsError::InvalidArgument(format!("part `{part}` has no views")));
    }
    let n = views.len() as f64;
    let mean = views.iter().sum::<f64>() / n;
    let var = views.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(PartScore { part: part.to_string(), mean, std: var.sqrt(), views: views.len() })
}
