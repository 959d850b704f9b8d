//! Per-filter activation statistics of nominal images, r-vectors and
//! anomaly scores.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{forward, ActivationRecord, TapPoint};
use crate::error::{FadsError, Result};
use crate::graph::NetworkGraph;
use crate::imaging::resize_bilinear;
use crate::par;
use crate::tensor::Tensor;
use crate::weights::WeightStore;

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-6;

/// Reduction of one activation map to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationKind {
    Min,
    #[default]
    Max,
    /// Recommended for texture-dominated data, where anomalies shift the
    /// overall response of a filter rather than a single location.
    Mean,
}

/// Reduction of an r-vector to an anomaly score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    #[default]
    Max,
    Percentile90,
    /// Euclidean norm of the r-vector (a diagonal Mahalanobis distance).
    /// Usually weaker than the other two; kept for comparison.
    L2,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 3] = [ScoreMethod::Max, ScoreMethod::Percentile90, ScoreMethod::L2];
}

pub fn aggregate_values(values: &[f32], agg: AggregationKind) -> Result<f64> {
    if values.is_empty() {
        return Err(FadsError::InvalidArgument("cannot aggregate an empty map".into()));
    }
    Ok(match agg {
        AggregationKind::Min => values.iter().copied().fold(f32::INFINITY, f32::min) as f64,
        AggregationKind::Max => values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64,
        AggregationKind::Mean => values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64,
    })
}

pub fn aggregate(map: &Tensor, agg: AggregationKind) -> Result<f64> {
    aggregate_values(map.data(), agg)
}

pub fn embed_record(record: &ActivationRecord, agg: AggregationKind) -> Result<Vec<f64>> {
    record.filter_maps().iter().map(|m| aggregate(m, agg)).collect()
}

/// Aggregated activation of every conv filter for one image.
pub fn embed(
    image: &Tensor,
    graph: &NetworkGraph,
    weights: &WeightStore,
    agg: AggregationKind,
    tap: TapPoint,
) -> Result<Vec<f64>> {
    embed_record(&forward(graph, weights, image, tap)?, agg)
}

/// Streaming per-dimension mean and variance (Welford, with Chan's merge).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dims: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dims],
            m2: vec![0.0; dims],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(FadsError::Dimension {
                op: "moment accumulator",
                left: vec![self.mean.len()],
                right: vec![x.len()],
            });
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if other.mean.len() != self.mean.len() {
            return Err(FadsError::Dimension {
                op: "moment merge",
                left: vec![self.mean.len()],
                right: vec![other.mean.len()],
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population standard deviation (denominator n).
    pub fn population_std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|&s| (s.max(0.0) / self.count as f64).sqrt())
            .collect()
    }
}

/// Options shared by every model fitted in one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub agg: AggregationKind,
    pub tap: TapPoint,
    pub sigma_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            agg: AggregationKind::Max,
            tap: TapPoint::Pre,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        }
    }
}

/// Nominal activation statistics for one network at one input size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadsModel {
    pub agg: AggregationKind,
    #[serde(default)]
    pub tap: TapPoint,
    pub input_size: [usize; 3],
    pub graph_name: String,
    pub n_train: usize,
    pub sigma_floor: f64,
    pub filter_mean: Vec<f64>,
    /// Population standard deviation, already raised to `sigma_floor`.
    pub filter_std: Vec<f64>,
}

const EMBED_CHUNK: usize = 64;

/// Embeds images in parallel chunks and folds them into a moment accumulator
/// in input order, so the result does not depend on the thread count.
pub fn accumulate_embeddings(
    images: &[Tensor],
    graph: &NetworkGraph,
    weights: &WeightStore,
    agg: AggregationKind,
    tap: TapPoint,
) -> Result<MomentAccumulator> {
    let mut acc = MomentAccumulator::new(graph.filter_count());
    for chunk in images.chunks(EMBED_CHUNK) {
        for e in par::map(chunk, |img| embed(img, graph, weights, agg, tap)) {
            acc.push(&e?)?;
        }
    }
    Ok(acc)
}

impl FadsModel {
    /// Fits mean and population standard deviation of every filter's
    /// aggregated activation over `images` (at least two).
    pub fn fit(images: &[Tensor], graph: &NetworkGraph, weights: &WeightStore, opts: FitOptions) -> Result<Self> {
        if images.len() < 2 {
            return Err(FadsError::InvalidArgument(format!(
                "fitting needs at least 2 nominal images, got {}",
                images.len()
            )));
        }
        if !(opts.sigma_floor > 0.0 && opts.sigma_floor.is_finite()) {
            return Err(FadsError::InvalidArgument("sigma_floor must be positive and finite".into()));
        }
        let acc = accumulate_embeddings(images, graph, weights, opts.agg, opts.tap)?;
        Ok(Self::from_moments(&acc, graph, opts))
    }

    pub fn from_moments(acc: &MomentAccumulator, graph: &NetworkGraph, opts: FitOptions) -> Self {
        Self {
            agg: opts.agg,
            tap: opts.tap,
            input_size: graph.input(),
            graph_name: graph.name().to_string(),
            n_train: acc.count(),
            sigma_floor: opts.sigma_floor,
            filter_mean: acc.mean().to_vec(),
            filter_std: acc
                .population_std()
                .into_iter()
                .map(|s| s.max(opts.sigma_floor))
                .collect(),
        }
    }

    pub fn filter_count(&self) -> usize {
        self.filter_mean.len()
    }

    /// Checks the structural invariants of a (possibly deserialised) model.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FadsError::InvalidArgument(format!("invalid model: {m}")));
        if self.filter_mean.len() != self.filter_std.len() || self.filter_mean.is_empty() {
            return bad("filter_mean and filter_std must be non-empty and equally long");
        }
        if self.n_train < 2 {
            return bad("n_train must be at least 2");
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return bad("sigma_floor must be positive");
        }
        if self.filter_std.iter().any(|&s| !(s >= 0.0 && s.is_finite())) || self.filter_mean.iter().any(|m| !m.is_finite()) {
            return bad("statistics must be finite with non-negative deviations");
        }
        Ok(())
    }

    pub fn check_binding(&self, graph: &NetworkGraph) -> Result<()> {
        if graph.filter_count() != self.filter_count() || graph.input() != self.input_size {
            return Err(FadsError::InvalidArgument(format!(
                "model expects {} filters at input {:?}, graph `{}` has {} filters at {:?}",
                self.filter_count(),
                self.input_size,
                graph.name(),
                graph.filter_count(),
                graph.input()
            )));
        }
        Ok(())
    }

    /// Effective deviation of filter `i` after flooring.
    pub fn sigma(&self, i: usize) -> f64 {
        self.filter_std[i].max(self.sigma_floor)
    }

    /// Standardised absolute deviation of each filter from its nominal mean.
    pub fn r_from_embedding(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.filter_count() {
            return Err(FadsError::Dimension {
                op: "r-vector",
                left: vec![self.filter_count()],
                right: vec![embedding.len()],
            });
        }
        Ok(embedding
            .iter()
            .zip(&self.filter_mean)
            .enumerate()
            .map(|(i, (&x, &m))| (x - m).abs() / self.sigma(i))
            .collect())
    }

    pub fn r_vector(&self, image: &Tensor, graph: &NetworkGraph, weights: &WeightStore) -> Result<Vec<f64>> {
        self.check_binding(graph)?;
        if image.shape() != self.input_size {
            return Err(FadsError::Dimension {
                op: "r-vector input",
                left: image.shape().to_vec(),
                right: self.input_size.to_vec(),
            });
        }
        self.r_from_embedding(&embed(image, graph, weights, self.agg, self.tap)?)
    }
}

/// Linear interpolation between order statistics at 0-based rank
/// `(n - 1) * q`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(FadsError::InvalidArgument("percentile of an empty vector".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn score(r: &[f64], method: ScoreMethod) -> Result<f64> {
    if r.is_empty() {
        return Err(FadsError::InvalidArgument("cannot score an empty r-vector".into()));
    }
    Ok(match method {
        ScoreMethod::Max => r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ScoreMethod::Percentile90 => percentile(r, 0.9)?,
        ScoreMethod::L2 => r.iter().map(|v| v * v).sum::<f64>().sqrt(),
    })
}

/// A graph bound to one input size plus its weights.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: NetworkGraph,
    pub weights: Arc<WeightStore>,
}

impl Network {
    pub fn new(graph: NetworkGraph, weights: Arc<WeightStore>) -> Result<Self> {
        weights.validate(&graph)?;
        Ok(Self { graph, weights })
    }

    /// The same weights with the graph re-validated at another input size.
    pub fn at_size(&self, input: [usize; 3]) -> Result<Self> {
        Ok(Self {
            graph: self.graph.with_input(input)?,
            weights: Arc::clone(&self.weights),
        })
    }

    pub fn input(&self) -> [usize; 3] {
        self.graph.input()
    }

    /// Resizes `image` to this network's input when the spatial size differs.
    pub fn prepare(&self, image: &Tensor) -> Result<Tensor> {
        let [c, h, w] = self.input();
        let (ic, ih, iw) = image.chw()?;
        if ic != c {
            return Err(FadsError::Dimension {
                op: "image channels",
                left: image.shape().to_vec(),
                right: self.input().to_vec(),
            });
        }
        if (ih, iw) == (h, w) {
            Ok(image.clone())
        } else {
            resize_bilinear(image, h, w)
        }
    }
}

/// Mean training score of a model under each scoring method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub max: f64,
    pub percentile90: f64,
    #[serde(default)]
    pub l2: f64,
}

impl Normalizers {
    pub fn get(&self, method: ScoreMethod) -> f64 {
        match method {
            ScoreMethod::Max => self.max,
            ScoreMethod::Percentile90 => self.percentile90,
            ScoreMethod::L2 => self.l2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub model: FadsModel,
    pub network: Network,
    pub normalizers: Normalizers,
}

impl EnsembleMember {
    /// Un-normalised score of `image` (resized to this member's input).
    pub fn raw_score(&self, image: &Tensor, method: ScoreMethod) -> Result<f64> {
        let img = self.network.prepare(image)?;
        let r = self.model.r_vector(&img, &self.network.graph, &self.network.weights)?;
        score(&r, method)
    }
}

/// Several models whose scores are normalised by their own mean training
/// score and averaged; nominal images then score around one.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub members: Vec<EnsembleMember>,
    pub scoring: ScoreMethod,
}

/// Computes each member's normalisers from its own training images.
pub fn ensemble_fit(
    members: Vec<(FadsModel, Network)>,
    training: &[&[Tensor]],
    scoring: ScoreMethod,
) -> Result<EnsembleModel> {
    if members.is_empty() {
        return Err(FadsError::InvalidArgument("an ensemble needs at least one member".into()));
    }
    if training.len() != members.len() {
        return Err(FadsError::InvalidArgument(format!(
            "{} members but {} training sets",
            members.len(),
            training.len()
        )));
    }
    let mut out = Vec::with_capacity(members.len());
    for (z, ((model, network), images)) in members.into_iter().zip(training).enumerate() {
        model.validate()?;
        model.check_binding(&network.graph)?;
        if images.len() < 2 {
            return Err(FadsError::InvalidArgument(format!("member {z} has fewer than 2 training images")));
        }
        let rs = par::map(images, |img| -> Result<Vec<f64>> {
            let img = network.prepare(img)?;
            model.r_vector(&img, &network.graph, &network.weights)
        });
        let mut sums = [0f64; 3];
        for r in rs {
            let r = r?;
            for (s, m) in sums.iter_mut().zip(ScoreMethod::ALL) {
                *s += score(&r, m)?;
            }
        }
        let n = images.len() as f64;
        let normalizers = Normalizers {
            max: sums[0] / n,
            percentile90: sums[1] / n,
            l2: sums[2] / n,
        };
        let chosen = normalizers.get(scoring);
        if !(chosen > 0.0 && chosen.is_finite()) {
            return Err(FadsError::Degenerate(format!(
                "member {z} ({:?} input) has mean training score {chosen}; every training image sits on its own mean",
                model.input_size
            )));
        }
        out.push(EnsembleMember { model, network, normalizers });
    }
    Ok(EnsembleModel { members: out, scoring })
}

impl EnsembleModel {
    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(FadsError::InvalidArgument("an ensemble needs at least one member".into()));
        }
        for (z, m) in self.members.iter().enumerate() {
            let s = m.normalizers.get(self.scoring);
            if !(s > 0.0 && s.is_finite()) {
                return Err(FadsError::Degenerate(format!("member {z} normaliser {s} is not positive")));
            }
            m.model.validate()?;
            m.model.check_binding(&m.network.graph)?;
        }
        Ok(())
    }

    /// Raw per-member scores before normalisation.
    pub fn member_scores(&self, image: &Tensor) -> Result<Vec<f64>> {
        self.members.iter().map(|m| m.raw_score(image, self.scoring)).collect()
    }

    /// Average of normalised member scores.
    pub fn score(&self, image: &Tensor) -> Result<f64> {
        let raw = self.member_scores(image)?;
        Ok(combine(&raw, &self.normalizers()))
    }

    pub fn normalizers(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.normalizers.get(self.scoring)).collect()
    }
}

/// `(1/Z) * sum(raw_z / normaliser_z)`.
pub fn combine(raw: &[f64], normalizers: &[f64]) -> f64 {
    let z = raw.len() as f64;
    raw.iter().zip(normalizers).map(|(s, n)| s / n).sum::<f64>() / z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_cases() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(aggregate(&m, AggregationKind::Mean).unwrap(), 2.5);
        assert_eq!(aggregate(&m, AggregationKind::Max).unwrap(), 4.0);
        assert_eq!(aggregate(&m, AggregationKind::Min).unwrap(), 1.0);
        let c = Tensor::filled(&[3, 5], -0.75);
        for agg in [AggregationKind::Min, AggregationKind::Max, AggregationKind::Mean] {
            assert_eq!(aggregate(&c, agg).unwrap(), -0.75);
        }
        assert!(aggregate_values(&[], AggregationKind::Mean).is_err());
    }

    #[test]
    fn moments_hand_case() {
        let mut acc = MomentAccumulator::new(2);
        acc.push(&[1.0, 3.0]).unwrap();
        acc.push(&[3.0, 5.0]).unwrap();
        assert_eq!(acc.mean(), &[2.0, 4.0]);
        assert_eq!(acc.population_std(), vec![1.0, 1.0]);
    }

    #[test]
    fn merge_matches_sequential() {
        let rows: Vec<[f64; 2]> = (0..9).map(|i| [i as f64 * 0.7 - 2.0, (i * i) as f64]).collect();
        let mut all = MomentAccumulator::new(2);
        let mut a = MomentAccumulator::new(2);
        let mut b = MomentAccumulator::new(2);
        for (i, r) in rows.iter().enumerate() {
            all.push(r).unwrap();
            if i < 4 { a.push(r).unwrap() } else { b.push(r).unwrap() }
        }
        a.merge(&b).unwrap();
        for (x, y) in a.mean().iter().zip(all.mean()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.population_std().iter().zip(all.population_std()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn toy_model(mean: Vec<f64>, std: Vec<f64>) -> FadsModel {
        FadsModel {
            agg: AggregationKind::Max,
            tap: TapPoint::Pre,
            input_size: [1, 1, 1],
            graph_name: "toy".into(),
            n_train: 2,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            filter_mean: mean,
            filter_std: std,
        }
    }

    #[test]
    fn r_vector_arithmetic() {
        let m = toy_model(vec![2.0, 4.0], vec![1.0, 1.0]);
        assert_eq!(m.r_from_embedding(&[4.0, 4.0]).unwrap(), vec![2.0, 0.0]);
        assert_eq!(m.r_from_embedding(&[2.0, 4.0]).unwrap(), vec![0.0, 0.0]);
        let dead = toy_model(vec![1.0], vec![0.0]);
        let r = dead.r_from_embedding(&[1.5]).unwrap();
        assert_eq!(r, vec![0.5 / DEFAULT_SIGMA_FLOOR]);
        assert!(r[0].is_finite());
    }

    #[test]
    fn score_cases() {
        assert_eq!(score(&[2.0, 0.0], ScoreMethod::Max).unwrap(), 2.0);
        let ten: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        assert!((score(&ten, ScoreMethod::Percentile90).unwrap() - 9.1).abs() < 1e-12);
        for m in ScoreMethod::ALL {
            assert_eq!(score(&[0.0; 7], m).unwrap(), 0.0);
        }
        assert_eq!(score(&[3.0, 4.0], ScoreMethod::L2).unwrap(), 5.0);
        assert!(score(&[], ScoreMethod::Max).is_err());
    }

    #[test]
    fn combine_arithmetic() {
        assert_eq!(combine(&[2.0, 3.0], &[1.0, 1.5]), 2.0);
        assert_eq!(combine(&[3.0], &[1.5]), 2.0);
    }

    #[test]
    fn validate_rejects_mismatch() {
        let mut m = toy_model(vec![1.0, 2.0], vec![1.0]);
        assert!(m.validate().is_err());
        m.filter_std.push(1.0);
        m.validate().unwrap();
        m.n_train = 1;
        assert!(m.validate().is_err());
    }
}
