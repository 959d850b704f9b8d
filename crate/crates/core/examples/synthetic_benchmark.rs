//! Fits a two-size ensemble on the synthetic benchmark and reports image
//! AUC, pixel AUC and region hit rates. The optional argument is the data seed.

use std::sync::Arc;
use std::time::Instant;

use fads::eval::{pixel_roc_auc, roc_auc, LabeledScores};
use fads::localize::{ensemble_saliency, region_label, saliency, RegionParams};
use fads::model::{ensemble_fit, FadsModel, FitOptions, Network, ScoreMethod};
use fads::synth::{generate, SynthConfig};
use fads::{make_reference_net, Tensor};

fn main() -> fads::Result<()> {
    let start = Instant::now();
    let seed = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(42);
    let data = generate(seed, &SynthConfig::default());
    let (graph, weights) = make_reference_net(42);
    let weights = Arc::new(weights);
    let train: Vec<Tensor> = data.train.iter().map(|s| s.image.clone()).collect();

    let mut members = Vec::new();
    for size in [32, 64] {
        let net = Network::new(graph.with_input([1, size, size])?, Arc::clone(&weights))?;
        let imgs: Vec<Tensor> = train.iter().map(|t| net.prepare(t)).collect::<fads::Result<_>>()?;
        let model = FadsModel::fit(&imgs, &net.graph, &net.weights, FitOptions::default())?;
        members.push((model, net));
    }
    let sets = vec![&train[..], &train[..]];
    let ensemble = ensemble_fit(members, &sets, ScoreMethod::Max)?;

    let mut scores = LabeledScores::new();
    for s in &data.test {
        scores.push(ensemble.score(&s.image)?, s.label, &s.id);
    }
    println!("image AUC {:.4}", roc_auc(&scores)?.auc);

    let params = RegionParams { pixel_threshold: 0.5, window: 8, region_threshold: 0.25 };
    for (name, use_ensemble) in [("64px member, unsmoothed", false), ("ensemble", true)] {
        let mut maps = Vec::new();
        let mut masks = Vec::new();
        let (mut hits, mut anomalies, mut nominal_set, mut nominal_cells) = (0, 0, 0, 0);
        for s in &data.test {
            let map = if use_ensemble {
                ensemble_saliency(&ensemble, &s.image, fads::localize::DEFAULT_SMOOTHING)?
            } else {
                let m = &ensemble.members[1];
                saliency(&s.image, &m.model, &m.network.graph, &m.network.weights)?
            };
            let mask = region_label(&map, params)?;
            match s.patch {
                Some(p) => {
                    anomalies += 1;
                    let (cy, cx) = p.center();
                    if mask.at_pixel(cy, cx) {
                        hits += 1;
                    }
                }
                None => {
                    nominal_set += mask.count_set();
                    nominal_cells += mask.cells.len();
                }
            }
            masks.push(s.mask());
            maps.push(map);
        }
        println!(
            "{name}: centre hit {hits}/{anomalies}, nominal cells set {:.3}, pixel AUC {:.4}",
            nominal_set as f64 / nominal_cells as f64,
            pixel_roc_auc(&maps, &masks)?
        );
    }
    println!("elapsed {:.2?}", start.elapsed());
    Ok(())
}
