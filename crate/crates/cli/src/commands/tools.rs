use std::process::ExitCode;

use fads::imaging::save_gray8;
use fads::persist::write_json;
use fads::refnet::REFERENCE_INPUT;
use fads::synth::{generate, SynthConfig, SynthImage};
use fads::{make_reference_net, save_graph, save_weights};

use super::create_out;
use crate::config::{MemberConfig, RunConfig};
use crate::fail::{usage_error, Classify, CliResult};
use crate::manifest;
use crate::{RefnetArgs, SynthArgs};

/// `refnet.json`, `refnet.fadsw` and a `config.json` with one member per
/// requested input size.
pub fn make_refnet(args: &RefnetArgs) -> CliResult<ExitCode> {
    if args.sizes.is_empty() || args.sizes.contains(&0) {
        return Err(usage_error("--sizes needs positive input sizes"));
    }
    create_out(&args.out)?;
    let (graph, weights) = make_reference_net(args.seed);
    save_graph(&graph, args.out.join("refnet.json")).data()?;
    save_weights(&weights, args.out.join("refnet.fadsw")).data()?;
    let cfg = RunConfig {
        members: args
            .sizes
            .iter()
            .map(|&s| MemberConfig {
                graph: "refnet.json".into(),
                weights: "refnet.fadsw".into(),
                input_size: [REFERENCE_INPUT[0], s, s],
            })
            .collect(),
        seed: args.seed,
        ..RunConfig::default()
    };
    for &s in &args.sizes {
        graph.with_input([REFERENCE_INPUT[0], s, s]).usage()?;
    }
    write_json(&cfg, args.out.join("config.json")).data()?;
    println!("reference network (seed {}) written to {}", args.seed, args.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Images under `images/`, ground-truth masks under `masks/`, and three
/// manifests: `train.csv`, `test.csv` and `all.csv` (both, for `eval`).
pub fn synth(args: &SynthArgs) -> CliResult<ExitCode> {
    let cfg = SynthConfig::default();
    let data = generate(args.seed, &cfg);
    for sub in ["images", "masks"] {
        create_out(&args.out.join(sub))?;
    }
    let write_images = |set: &[SynthImage]| -> CliResult<Vec<(String, String, String, Option<fads::Label>, String)>> {
        set.iter()
            .map(|s| {
                let rel = format!("images/{}.png", s.id);
                save_gray8(s.image.data(), cfg.size, cfg.size, args.out.join(&rel)).data()?;
                if s.patch.is_some() {
                    let mask: Vec<f32> = s.mask().iter().map(|&m| m as u8 as f32).collect();
                    save_gray8(&mask, cfg.size, cfg.size, args.out.join(format!("masks/{}.png", s.id))).data()?;
                }
                Ok((s.id.clone(), String::new(), rel, Some(s.label), "synth".to_string()))
            })
            .collect()
    };
    let train = write_images(&data.train)?;
    let test = write_images(&data.test)?;
    let write = |name: &str, rows: &[_]| manifest::write(&args.out.join(name), rows).data();
    write("train.csv", &train)?;
    write("test.csv", &test)?;
    write("all.csv", &[train.clone(), test.clone()].concat())?;
    let patches: Vec<_> = data.test.iter().filter_map(|s| s.patch.map(|p| (s.id.clone(), p))).collect();
    write_json(&patches, args.out.join("patches.json")).data()?;
    println!(
        "synthetic dataset (seed {}): {} train, {} test images in {}",
        args.seed,
        train.len(),
        test.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
