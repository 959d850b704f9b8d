//! Seeded synthetic inspection benchmark: sinusoidal gratings with noise as
//! nominal images, and the same with a square patch of rotated,
//! higher-contrast grating as anomalies.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::eval::Label;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: usize,
    pub n_train: usize,
    pub n_test_nominal: usize,
    pub n_test_anomalous: usize,
    pub patch: usize,
    pub period: f64,
    pub amplitude: f64,
    pub noise: f64,
    /// Patch grating amplitude relative to the background grating.
    pub patch_contrast: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            n_train: 40,
            n_test_nominal: 40,
            n_test_anomalous: 40,
            patch: 12,
            period: 8.0,
            amplitude: 0.25,
            noise: 0.04,
            patch_contrast: 1.8,
        }
    }
}

/// Top-left corner and side of an inserted patch, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl Patch {
    pub fn center(&self) -> (usize, usize) {
        (self.y + self.size / 2, self.x + self.size / 2)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y..self.y + self.size).contains(&y) && (self.x..self.x + self.size).contains(&x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub id: String,
    pub label: Label,
    pub image: Tensor,
    pub patch: Option<Patch>,
}

impl SynthImage {
    /// Pixel-level ground truth: true inside the patch.
    pub fn mask(&self) -> Vec<bool> {
        let (_, h, w) = self.image.chw().expect("synthetic images are [1,H,W]");
        (0..h * w)
            .map(|i| self.patch.is_some_and(|p| p.contains(i / w, i % w)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub train: Vec<SynthImage>,
    pub test: Vec<SynthImage>,
}

struct Grating {
    period: f64,
    angle: f64,
    phase: f64,
    amplitude: f64,
}

impl Grating {
    fn at(&self, y: usize, x: usize) -> f64 {
        let u = x as f64 * self.angle.cos() + y as f64 * self.angle.sin();
        self.amplitude * (2.0 * PI * u / self.period + self.phase).sin()
    }
}

fn background(rng: &mut SplitMix64, cfg: &SynthConfig) -> Grating {
    Grating {
        period: cfg.period * rng.range(0.95, 1.05),
        angle: rng.symmetric(0.15),
        phase: rng.range(0.0, 2.0 * PI),
        amplitude: cfg.amplitude * rng.range(0.9, 1.1),
    }
}

fn render(rng: &mut SplitMix64, cfg: &SynthConfig, patch: Option<(Patch, Grating)>) -> Tensor {
    let bg = background(rng, cfg);
    let n = cfg.size;
    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let texture = match &patch {
                Some((p, g)) if p.contains(y, x) => g.at(y, x),
                _ => bg.at(y, x),
            };
            let v = 0.5 + texture + cfg.noise * rng.normal();
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::new(vec![1, n, n], data).expect("size is positive")
}

pub fn nominal_image(rng: &mut SplitMix64, cfg: &SynthConfig) -> Tensor {
    render(rng, cfg, None)
}

pub fn anomalous_image(rng: &mut SplitMix64, cfg: &SynthConfig) -> (Tensor, Patch) {
    let margin = 2;
    let span = (cfg.size - cfg.patch - 2 * margin) as u64 + 1;
    let patch = Patch {
        x: margin + rng.below(span) as usize,
        y: margin + rng.below(span) as usize,
        size: cfg.patch,
    };
    let g = Grating {
        period: cfg.period * rng.range(0.95, 1.05),
        angle: PI / 2.0 + rng.symmetric(0.15),
        phase: rng.range(0.0, 2.0 * PI),
        amplitude: cfg.amplitude * cfg.patch_contrast,
    };
    (render(rng, cfg, Some((patch, g))), patch)
}

/// Each image draws from its own SplitMix64 stream seeded from a master
/// stream, so individual images are reproducible in isolation.
pub fn generate(seed: u64, cfg: &SynthConfig) -> SynthDataset {
    let mut master = SplitMix64::new(seed);
    let mut nominal = |id: String| {
        let mut rng = SplitMix64::new(master.next_u64());
        SynthImage { id, label: Label::Nominal, image: nominal_image(&mut rng, cfg), patch: None }
    };
    let train: Vec<_> = (0..cfg.n_train).map(|i| nominal(format!("train-{i:03}"))).collect();
    let mut test: Vec<_> = (0..cfg.n_test_nominal).map(|i| nominal(format!("nominal-{i:03}"))).collect();
    for i in 0..cfg.n_test_anomalous {
        let mut rng = SplitMix64::new(master.next_u64());
        let (image, patch) = anomalous_image(&mut rng, cfg);
        test.push(SynthImage { id: format!("anomaly-{i:03}"), label: Label::Anomaly, image, patch: Some(patch) });
    }
    SynthDataset { train, test }
}
