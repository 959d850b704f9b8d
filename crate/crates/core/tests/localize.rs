mod common;

use common::*;
use fads::engine::{forward, TapPoint};
use fads::graph::{LayerKind, LayerSpec, NetworkGraph};
use fads::localize::{anomaly_loss, loss_seeds, raw_saliency, region_label, saliency, RegionParams, SaliencyMap};
use fads::model::{embed, embed_record, AggregationKind, FadsModel, FitOptions};
use fads::refnet::reference_graph;
use fads::rng::SplitMix64;
use fads::{backward, make_reference_net, GradMode, Tensor, WeightStore};
use proptest::prelude::*;

/// One 1x1 convolution with unit weight: the filter map is the image itself.
fn identity_net(size: usize) -> (NetworkGraph, WeightStore) {
    let g = NetworkGraph::new(
        "identity",
        [1, size, size],
        vec![LayerSpec::new("id", LayerKind::Conv2d { out: 1, kh: 1, kw: 1, stride: 1, pad: 0 })],
    )
    .unwrap();
    let mut w = WeightStore::new();
    w.insert("id", "kernel", Tensor::filled(&[1, 1, 1, 1], 1.0));
    w.insert("id", "bias", Tensor::zeros(&[1]));
    (g, w)
}

#[test]
fn bright_pixel_is_the_saliency_peak() {
    let (g, w) = identity_net(16);
    let mut rng = SplitMix64::new(4);
    let train: Vec<Tensor> = (0..8).map(|_| random_positive(&mut rng, &[1, 16, 16], 0.0, 0.2)).collect();
    let model = FadsModel::fit(&train, &g, &w, FitOptions::default()).unwrap();
    let mut probe = random_positive(&mut rng, &[1, 16, 16], 0.0, 0.2);
    probe.data_mut()[5 * 16 + 7] = 1.0;
    let map = saliency(&probe, &model, &g, &w).unwrap();
    assert_eq!(map.peak(), (5, 7));
    assert_eq!(map.get(5, 7), 1.0);
    assert_eq!(map.values.iter().filter(|&&v| v > 0.0).count(), 1);
}

#[test]
fn image_at_the_nominal_mean_has_no_saliency() {
    let (_, w) = make_reference_net(3);
    let g = reference_graph([1, 16, 16]).unwrap();
    let mut rng = SplitMix64::new(2);
    let probe = random_positive(&mut rng, &[1, 16, 16], 0.0, 1.0);
    let train: Vec<Tensor> = (0..4).map(|_| random_positive(&mut rng, &[1, 16, 16], 0.0, 1.0)).collect();
    let mut model = FadsModel::fit(&train, &g, &w, FitOptions::default()).unwrap();
    model.filter_mean = embed(&probe, &g, &w, model.agg, model.tap).unwrap();
    let map = saliency(&probe, &model, &g, &w).unwrap();
    assert!(map.values.iter().all(|&v| v == 0.0));
    assert_eq!(map.source_score, 0.0);
}

#[test]
fn saliency_is_deterministic_and_normalised() {
    let (_, w) = make_reference_net(6);
    let g = reference_graph([1, 32, 32]).unwrap();
    let mut rng = SplitMix64::new(61);
    let train: Vec<Tensor> = (0..6).map(|_| random_positive(&mut rng, &[1, 32, 32], 0.0, 1.0)).collect();
    let model = FadsModel::fit(&train, &g, &w, FitOptions::default()).unwrap();
    let probe = random_positive(&mut rng, &[1, 32, 32], 0.0, 1.0);
    let a = saliency(&probe, &model, &g, &w).unwrap();
    let b = saliency(&probe, &model, &g, &w).unwrap();
    assert_eq!(a, b);
    assert!(a.values.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a.values.iter().cloned().fold(0.0f32, f32::max), 1.0);
}

#[test]
fn max_aggregation_saliency_stays_inside_the_receptive_field() {
    // A conv3 unit at grid position p sees input pixels 4p-6..=4p+9.
    let (_, w) = make_reference_net(9);
    let g = reference_graph([1, 32, 32]).unwrap();
    let mut rng = SplitMix64::new(90);
    let train: Vec<Tensor> = (0..6).map(|_| random_positive(&mut rng, &[1, 32, 32], 0.0, 1.0)).collect();
    let model = FadsModel::fit(&train, &g, &w, FitOptions::default()).unwrap();
    let probe = random_positive(&mut rng, &[1, 32, 32], 0.0, 1.0);
    let rec = forward(&g, &w, &probe, TapPoint::Pre).unwrap();
    let emb = embed_record(&rec, AggregationKind::Max).unwrap();
    let r = model.r_from_embedding(&emb).unwrap();
    let (_, active) = anomaly_loss(&r);
    let seeds = loss_seeds(&model, rec.filter_maps(), &emb, &r, &active);
    let (raw, _) = raw_saliency(&probe, &model, &g, &w, GradMode::Guided).unwrap();
    let centres: Vec<(usize, usize, usize)> = seeds
        .iter()
        .map(|(i, seed)| {
            let (layer, _) = rec.filter_origin(*i);
            let mw = seed.shape()[1];
            let pos = seed.data().iter().position(|&v| v != 0.0).unwrap();
            let scale = 32 / mw;
            let reach = [2, 4, 10][[0usize, 3, 6].iter().position(|&l| l == layer).unwrap()];
            ((pos / mw) * scale, (pos % mw) * scale, reach)
        })
        .collect();
    for (p, &v) in raw.iter().enumerate() {
        if v != 0.0 {
            let (y, x) = (p / 32, p % 32);
            assert!(
                centres.iter().any(|&(cy, cx, reach)| y.abs_diff(cy) <= reach && x.abs_diff(cx) <= reach),
                "pixel ({y},{x}) outside every receptive field"
            );
        }
    }
    assert!(raw.iter().any(|&v| v != 0.0));
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (_, w) = make_reference_net(13);
    let g = reference_graph([1, 16, 16]).unwrap();
    let mut rng = SplitMix64::new(130);
    let train: Vec<Tensor> = (0..8).map(|_| random_positive(&mut rng, &[1, 16, 16], 0.0, 1.0)).collect();
    let opts = FitOptions { agg: AggregationKind::Mean, ..Default::default() };
    let model = FadsModel::fit(&train, &g, &w, opts).unwrap();
    let probe = random_positive(&mut rng, &[1, 16, 16], 0.0, 1.0);

    let rec = forward(&g, &w, &probe, TapPoint::Pre).unwrap();
    let emb = embed_record(&rec, model.agg).unwrap();
    let r = model.r_from_embedding(&emb).unwrap();
    let (_, active) = anomaly_loss(&r);
    let seeds = loss_seeds(&model, rec.filter_maps(), &emb, &r, &active);
    let grad = backward(&rec, &g, &w, &seeds, GradMode::Vanilla).unwrap();
    let pattern = activation_pattern(&g, &rec);

    let loss_at = |x: &Tensor| {
        let rec = forward(&g, &w, x, TapPoint::Pre).unwrap();
        let e = embed_record(&rec, model.agg).unwrap();
        let r = model.r_from_embedding(&e).unwrap();
        let (loss, act) = anomaly_loss(&r);
        let same_sign = active.iter().all(|&i| (e[i] > model.filter_mean[i]) == (emb[i] > model.filter_mean[i]));
        (loss, act == active && same_sign && activation_pattern(&g, &rec) == pattern)
    };
    // Inside one linear region the loss is quadratic in the image, so central
    // differences are exact for any step; a wider step keeps f32 noise small.
    let h = 1e-2f32;
    let mut checked = 0;
    for p in 0..probe.numel() {
        let shift = |d: f32| {
            let mut x = probe.clone();
            x.data_mut()[p] += d;
            loss_at(&x)
        };
        let ((lp, okp), (lm, okm)) = (shift(h), shift(-h));
        if !(okp && okm) {
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h as f64);
        let analytic = grad.data()[p] as f64;
        if analytic.abs() < 1e-3 && numeric.abs() < 1e-3 {
            assert!((analytic - numeric).abs() <= 1e-4, "pixel {p}: {analytic} vs {numeric}");
        } else {
            assert!(rel_close(analytic, numeric, 1e-2), "pixel {p}: {analytic} vs {numeric}");
        }
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} pixels away from kinks");
}

fn block_map() -> SaliencyMap {
    let mut values = vec![0.0f32; 32 * 32];
    for y in 8..16 {
        for x in 16..24 {
            values[y * 32 + x] = 1.0;
        }
    }
    SaliencyMap { height: 32, width: 32, values, source_score: 1.0 }
}

#[test]
fn one_block_sets_exactly_its_cell() {
    let params = RegionParams { pixel_threshold: 0.5, window: 8, region_threshold: 0.25 };
    let mask = region_label(&block_map(), params).unwrap();
    assert_eq!((mask.rows, mask.cols), (4, 4));
    assert_eq!(mask.count_set(), 1);
    assert!(mask.get(1, 2));
    assert!(mask.at_pixel(12, 20));
}

#[test]
fn partial_windows_use_their_own_area() {
    let mut values = vec![0.0f32; 20 * 20];
    for y in 16..20 {
        for x in 16..20 {
            values[y * 20 + x] = 1.0;
        }
    }
    let map = SaliencyMap { height: 20, width: 20, values, source_score: 0.0 };
    let mask = region_label(&map, RegionParams { pixel_threshold: 0.5, window: 8, region_threshold: 0.25 }).unwrap();
    assert_eq!((mask.rows, mask.cols), (3, 3));
    assert_eq!(mask.cells.iter().positions(), vec![8]);
}

trait Positions {
    fn positions(self) -> Vec<usize>;
}

impl<'a, I: Iterator<Item = &'a bool>> Positions for I {
    fn positions(self) -> Vec<usize> {
        self.enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }
}

#[test]
fn invalid_region_params_are_rejected() {
    let map = block_map();
    for p in [
        RegionParams { pixel_threshold: 1.5, ..Default::default() },
        RegionParams { region_threshold: -0.1, ..Default::default() },
        RegionParams { window: 0, ..Default::default() },
        RegionParams { window: 64, ..Default::default() },
    ] {
        assert!(region_label(&map, p).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_thresholds_never_adds_cells(
        seed in any::<u64>(),
        t1 in 0.0f32..1.0, t2 in 0.0f32..1.0,
        q1 in 0.0f32..1.0, q2 in 0.0f32..1.0,
        window in 1usize..12,
    ) {
        let mut rng = SplitMix64::new(seed);
        let map = SaliencyMap::from_raw(24, 24, random_positive(&mut rng, &[1, 24, 24], 0.0, 1.0).into_data(), 0.0);
        let lo = RegionParams { pixel_threshold: t1.min(t2), window, region_threshold: q1.min(q2) };
        let hi = RegionParams { pixel_threshold: t1.max(t2), window, region_threshold: q1.max(q2) };
        let a = region_label(&map, lo).unwrap();
        let b = region_label(&map, hi).unwrap();
        for (x, y) in a.cells.iter().zip(&b.cells) {
            prop_assert!(*x || !*y);
        }
    }
}
