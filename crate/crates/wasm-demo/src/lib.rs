//! Browser demo: fit a two-member ensemble on synthetic gratings, then score
//! fresh samples and show their saliency and region masks.
//!
//! [`DemoCore`] holds all the logic in plain Rust; [`Demo`] is the thin
//! JavaScript-facing wrapper.

use std::sync::Arc;

use fads::localize::{ensemble_saliency, region_label, RegionParams, SaliencyMap, DEFAULT_SMOOTHING};
use fads::model::{ensemble_fit, EnsembleModel, FadsModel, FitOptions, Network, ScoreMethod};
use fads::rng::SplitMix64;
use fads::synth::{anomalous_image, generate, nominal_image, Patch, SynthConfig};
use fads::{make_reference_net, Tensor};
use wasm_bindgen::prelude::*;

const SIZES: [usize; 2] = [32, 64];

pub struct DemoCore {
    cfg: SynthConfig,
    ensemble: EnsembleModel,
    rng: SplitMix64,
    image: Tensor,
    patch: Option<Patch>,
    score: f64,
    saliency: Option<SaliencyMap>,
}

impl DemoCore {
    /// Builds the seeded reference net and fits it on the seeded training
    /// gratings, then draws a first nominal sample.
    pub fn new(seed: u64) -> fads::Result<Self> {
        let cfg = SynthConfig { n_test_nominal: 0, n_test_anomalous: 0, ..Default::default() };
        let train: Vec<Tensor> = generate(seed, &cfg).train.into_iter().map(|s| s.image).collect();
        let (graph, weights) = make_reference_net(seed);
        let base = Network::new(graph, Arc::new(weights))?;
        let mut members = Vec::with_capacity(SIZES.len());
        for size in SIZES {
            let net = base.at_size([1, size, size])?;
            let prepared = train.iter().map(|i| net.prepare(i)).collect::<fads::Result<Vec<_>>>()?;
            members.push((FadsModel::fit(&prepared, &net.graph, &net.weights, FitOptions::default())?, net));
        }
        let sets = vec![train.as_slice(); SIZES.len()];
        let ensemble = ensemble_fit(members, &sets, ScoreMethod::Max)?;
        let mut demo = Self {
            cfg,
            ensemble,
            rng: SplitMix64::new(seed ^ 0x5EED),
            image: Tensor::zeros(&[1, cfg.size, cfg.size]),
            patch: None,
            score: 0.0,
            saliency: None,
        };
        demo.draw(false)?;
        Ok(demo)
    }

    pub fn size(&self) -> usize {
        self.cfg.size
    }

    /// Replaces the current image with a fresh sample and scores it.
    pub fn draw(&mut self, anomalous: bool) -> fads::Result<f64> {
        if anomalous {
            let (img, patch) = anomalous_image(&mut self.rng, &self.cfg);
            self.image = img;
            self.patch = Some(patch);
        } else {
            self.image = nominal_image(&mut self.rng, &self.cfg);
            self.patch = None;
        }
        self.saliency = None;
        self.score = self.ensemble.score(&self.image)?;
        Ok(self.score)
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn image(&self) -> &[f32] {
        self.image.data()
    }

    pub fn patch(&self) -> Option<Patch> {
        self.patch
    }

    /// Ensemble saliency of the current image.
    pub fn saliency(&mut self, smoothing: f64) -> fads::Result<&SaliencyMap> {
        let map = ensemble_saliency(&self.ensemble, &self.image, smoothing)?;
        Ok(self.saliency.insert(map))
    }

    /// Region cells (row-major) of the last computed saliency map.
    pub fn mask(&self, params: RegionParams) -> fads::Result<(usize, Vec<bool>)> {
        let map = self
            .saliency
            .as_ref()
            .ok_or_else(|| fads::FadsError::InvalidArgument("compute the saliency map first".into()))?;
        let mask = region_label(map, params)?;
        Ok((mask.cols, mask.cells))
    }
}

fn js(e: fads::FadsError) -> JsError {
    JsError::new(&e.to_string())
}

fn gray_rgba(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// Saliency as a translucent red-to-yellow layer.
fn heat_rgba(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| {
            let v = v.clamp(0.0, 1.0);
            [255, (v * 255.0) as u8, 0, (v * 200.0) as u8]
        })
        .collect()
}

#[wasm_bindgen]
pub struct Demo {
    core: DemoCore,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsError> {
        Ok(Demo { core: DemoCore::new(seed as u64).map_err(js)? })
    }

    pub fn size(&self) -> usize {
        self.core.size()
    }

    /// Draws a new nominal or anomalous sample; returns its ensemble score.
    pub fn draw(&mut self, anomalous: bool) -> Result<f64, JsError> {
        self.core.draw(anomalous).map_err(js)
    }

    pub fn score(&self) -> f64 {
        self.core.score()
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        gray_rgba(self.core.image())
    }

    /// `[x, y, size]` of the inserted patch, or empty for nominal samples.
    pub fn patch(&self) -> Vec<usize> {
        self.core.patch().map_or(Vec::new(), |p| vec![p.x, p.y, p.size])
    }

    pub fn default_smoothing() -> f64 {
        DEFAULT_SMOOTHING
    }

    pub fn heatmap_rgba(&mut self, smoothing: f64) -> Result<Vec<u8>, JsError> {
        let map = self.core.saliency(smoothing).map_err(js)?;
        Ok(heat_rgba(&map.values))
    }

    /// Row-major region cells as 0/1 bytes; the column count is
    /// `ceil(size / window)`.
    pub fn mask(&self, pixel_threshold: f32, window: usize, region_threshold: f32) -> Result<Vec<u8>, JsError> {
        let params = RegionParams { pixel_threshold, window, region_threshold };
        let (_, cells) = self.core.mask(params).map_err(js)?;
        Ok(cells.into_iter().map(u8::from).collect())
    }
}
