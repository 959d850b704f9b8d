//! Saliency maps via guided backpropagation of the top-decile r-vector loss,
//! and region masks from thresholded average pooling of those maps.

use serde::{Deserialize, Serialize};

use crate::engine::{backward, forward};
use crate::error::{FadsError, Result};
use crate::graph::NetworkGraph;
use crate::imaging::{gaussian_blur, resize_bilinear};
use crate::model::{combine, embed_record, score, AggregationKind, EnsembleModel, FadsModel, ScoreMethod};
use crate::ops::{abs_grad, GradMode};
use crate::tensor::Tensor;
use crate::weights::WeightStore;

/// Mean squared r over the `ceil(I/10)` largest entries, and those entries'
/// indices (ties go to the lower filter index).
pub fn anomaly_loss(r: &[f64]) -> (f64, Vec<usize>) {
    if r.is_empty() {
        return (0.0, Vec::new());
    }
    let k = r.len().div_ceil(10);
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    order.truncate(k);
    let loss = order.iter().map(|&i| r[i] * r[i]).sum::<f64>() / k as f64;
    (loss, order)
}

/// Per-pixel saliency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub source_score: f64,
}

impl SaliencyMap {
    /// Min-max normalises `raw`; an identically zero map stays zero and any
    /// other constant map becomes all ones.
    pub fn from_raw(height: usize, width: usize, raw: Vec<f32>, source_score: f64) -> Self {
        let (lo, hi) = raw
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let values = if raw.iter().all(|&v| v == 0.0) {
            raw
        } else if hi > lo {
            let span = (hi - lo) as f64;
            raw.iter().map(|&v| ((v - lo) as f64 / span) as f32).collect()
        } else {
            vec![1.0; raw.len()]
        };
        Self { height, width, values, source_score }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Index of the first maximal pixel as `(y, x)`.
    pub fn peak(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Gradient seeds for the anomaly loss, one `(filter, map gradient)` per
/// active filter with a non-zero derivative. The active set is held fixed.
pub fn loss_seeds(
    model: &FadsModel,
    maps: &[Tensor],
    embedding: &[f64],
    r: &[f64],
    active: &[usize],
) -> Vec<(usize, Tensor)> {
    let k = active.len() as f64;
    let mut seeds = Vec::with_capacity(active.len());
    for &i in active {
        let delta = embedding[i] - model.filter_mean[i];
        let coef = 2.0 * r[i] * abs_grad(delta) / (model.sigma(i) * k);
        if coef == 0.0 {
            continue;
        }
        let map = &maps[i];
        let m = map.numel();
        let mut g = Tensor::zeros(map.shape());
        match model.agg {
            AggregationKind::Mean => {
                let share = (coef / m as f64) as f32;
                g.data_mut().fill(share);
            }
            AggregationKind::Max | AggregationKind::Min => {
                let data = map.data();
                let mut pick = 0;
                for (j, &v) in data.iter().enumerate() {
                    let better = match model.agg {
                        AggregationKind::Max => v > data[pick],
                        _ => v < data[pick],
                    };
                    if better {
                        pick = j;
                    }
                }
                g.data_mut()[pick] = coef as f32;
            }
        }
        seeds.push((i, g));
    }
    seeds
}

/// Absolute guided-backprop gradient of the anomaly loss with respect to the
/// image, reduced over channels by maximum. Not normalised.
pub fn raw_saliency(
    image: &Tensor,
    model: &FadsModel,
    graph: &NetworkGraph,
    weights: &WeightStore,
    mode: GradMode,
) -> Result<(Vec<f32>, Vec<f64>)> {
    model.check_binding(graph)?;
    let rec = forward(graph, weights, image, model.tap)?;
    let embedding = embed_record(&rec, model.agg)?;
    let r = model.r_from_embedding(&embedding)?;
    let (_, active) = anomaly_loss(&r);
    let seeds = loss_seeds(model, rec.filter_maps(), &embedding, &r, &active);
    let grad = backward(&rec, graph, weights, &seeds, mode)?;
    let (c, h, w) = grad.chw()?;
    let plane = h * w;
    let mut raw = vec![0f32; plane];
    for ch in 0..c {
        for (dst, &g) in raw.iter_mut().zip(&grad.data()[ch * plane..(ch + 1) * plane]) {
            *dst = dst.max(g.abs());
        }
    }
    Ok((raw, r))
}

/// Normalised saliency for one model; `source_score` is the max of r.
pub fn saliency(image: &Tensor, model: &FadsModel, graph: &NetworkGraph, weights: &WeightStore) -> Result<SaliencyMap> {
    let (raw, r) = raw_saliency(image, model, graph, weights, GradMode::Guided)?;
    let [_, h, w] = model.input_size;
    Ok(SaliencyMap::from_raw(h, w, raw, score(&r, ScoreMethod::Max)?))
}

/// Default Gaussian smoothing, in image pixels, applied to each member's
/// saliency before normalisation in [`ensemble_saliency`].
pub const DEFAULT_SMOOTHING: f64 = 4.0;

/// Saliency of every ensemble member, smoothed with a Gaussian of
/// `smoothing` image pixels (scaled to each member's grid), normalised,
/// resampled to the image size and averaged, then normalised again.
/// `source_score` is the ensemble score.
pub fn ensemble_saliency(ensemble: &EnsembleModel, image: &Tensor, smoothing: f64) -> Result<SaliencyMap> {
    let (_, h, w) = image.chw()?;
    let mut sum = vec![0f64; h * w];
    let mut raw_scores = Vec::with_capacity(ensemble.members.len());
    for m in &ensemble.members {
        let img = m.network.prepare(image)?;
        let (raw, r) = raw_saliency(&img, &m.model, &m.network.graph, &m.network.weights, GradMode::Guided)?;
        raw_scores.push(score(&r, ensemble.scoring)?);
        let [_, mh, mw] = m.model.input_size;
        let sigma = smoothing * mh as f64 / h as f64;
        let norm = SaliencyMap::from_raw(mh, mw, gaussian_blur(&raw, mh, mw, sigma), 0.0);
        let resized = resize_bilinear(&Tensor::new(vec![1, mh, mw], norm.values)?, h, w)?;
        for (s, &v) in sum.iter_mut().zip(resized.data()) {
            *s += v as f64;
        }
    }
    let z = ensemble.members.len() as f64;
    let avg = sum.into_iter().map(|v| (v / z) as f32).collect();
    let final_score = combine(&raw_scores, &ensemble.normalizers());
    Ok(SaliencyMap::from_raw(h, w, avg, final_score))
}

/// Thresholds for converting saliency into region labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    /// A pixel counts as salient when its value exceeds this.
    pub pixel_threshold: f32,
    /// Side of the square pooling window.
    pub window: usize,
    /// A region is anomalous when its salient fraction exceeds this.
    pub region_threshold: f32,
}

impl Default for RegionParams {
    fn default() -> Self {
        Self {
            pixel_threshold: 0.5,
            window: 16,
            region_threshold: 0.25,
        }
    }
}

impl RegionParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        if !unit(self.pixel_threshold) || !unit(self.region_threshold) {
            return Err(FadsError::InvalidArgument(format!(
                "thresholds must lie in [0, 1], got pixel {} region {}",
                self.pixel_threshold, self.region_threshold
            )));
        }
        if self.window == 0 {
            return Err(FadsError::InvalidArgument("pooling window must be positive".into()));
        }
        Ok(())
    }
}

/// Binary grid of `ceil(H/n) x ceil(W/n)` regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
    pub params: RegionParams,
}

impl RegionMask {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    /// Cell covering pixel `(y, x)`.
    pub fn at_pixel(&self, y: usize, x: usize) -> bool {
        self.get(y / self.params.window, x / self.params.window)
    }

    pub fn count_set(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Average-pools the indicator `saliency > pixel_threshold` over `n x n`
/// windows (trailing partial windows use their real pixel count) and marks
/// windows whose fraction exceeds `region_threshold`.
pub fn region_label(map: &SaliencyMap, params: RegionParams) -> Result<RegionMask> {
    params.validate()?;
    let n = params.window;
    if map.height < n || map.width < n {
        return Err(FadsError::InvalidArgument(format!(
            "pooling window {n} exceeds map {}x{}",
            map.height, map.width
        )));
    }
    let rows = map.height.div_ceil(n);
    let cols = map.width.div_ceil(n);
    let mut cells = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let ys = row * n..((row + 1) * n).min(map.height);
            let xs = col * n..((col + 1) * n).min(map.width);
            let total = ys.len() * xs.len();
            let hot = ys
                .flat_map(|y| xs.clone().map(move |x| (y, x)))
                .filter(|&(y, x)| map.get(y, x) > params.pixel_threshold)
                .count();
            cells.push(hot as f64 / total as f64 > params.region_threshold as f64);
        }
    }
    Ok(RegionMask { rows, cols, cells, params })
}
