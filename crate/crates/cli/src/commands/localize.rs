use std::process::ExitCode;

use anyhow::Context;
use fads::imaging::save_gray8;
use fads::localize::{ensemble_saliency, region_label, RegionMask, RegionParams, SaliencyMap};
use fads::persist::{load_ensemble, write_json};
use fads::Tensor;
use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::Serialize;

use super::{create_out, csv_writer, optional_config};
use crate::fail::{Classify, CliResult};
use crate::manifest::Manifest;
use crate::pipeline::stem;
use crate::{HeatmapFormat, LocalizeArgs};

/// Sidecar describing one image's region mask.
#[derive(Serialize)]
struct MaskFile<'a> {
    id: &'a str,
    view: &'a str,
    height: usize,
    width: usize,
    score: f64,
    smoothing: f64,
    params: RegionParams,
    rows: usize,
    cols: usize,
    cells_set: usize,
    cells: Vec<Vec<u8>>,
}

pub fn run(args: &LocalizeArgs) -> CliResult<ExitCode> {
    let cfg = optional_config(args.config.as_deref())?;
    let params = cfg.localization.region();
    let ensemble = load_ensemble(&args.model).usage()?;
    let manifest = Manifest::load(&args.manifest).data()?;
    let images = manifest.load_images(cfg.grayscale).data()?;
    create_out(&args.out)?;

    let results = images
        .par_iter()
        .map(|img| -> fads::Result<(SaliencyMap, RegionMask)> {
            let map = ensemble_saliency(&ensemble, img, cfg.localization.smoothing)?;
            let mask = region_label(&map, params)?;
            Ok((map, mask))
        })
        .collect::<fads::Result<Vec<_>>>()
        .data()?;

    let ext = match args.format {
        HeatmapFormat::Png => "png",
        HeatmapFormat::Pgm => "pgm",
    };
    let mut summary = csv_writer(&args.out.join("localize.csv"))?;
    summary.write_record(["id", "view", "score", "cells_set", "peak_y", "peak_x"]).data()?;
    for ((entry, img), (map, mask)) in manifest.entries.iter().zip(&images).zip(&results) {
        let name = stem(&entry.id, &entry.view);
        let (h, w) = (map.height, map.width);
        save_gray8(&map.values, h, w, args.out.join(format!("{name}.saliency.{ext}"))).data()?;
        let cover: Vec<f32> = (0..h * w).map(|i| mask.at_pixel(i / w, i % w) as u8 as f32).collect();
        save_gray8(&cover, h, w, args.out.join(format!("{name}.mask.{ext}"))).data()?;
        let sidecar = MaskFile {
            id: &entry.id,
            view: &entry.view,
            height: h,
            width: w,
            score: map.source_score,
            smoothing: cfg.localization.smoothing,
            params,
            rows: mask.rows,
            cols: mask.cols,
            cells_set: mask.count_set(),
            cells: mask.cells.chunks(mask.cols).map(|r| r.iter().map(|&c| c as u8).collect()).collect(),
        };
        write_json(&sidecar, args.out.join(format!("{name}.mask.json"))).data()?;
        if args.overlay {
            let path = args.out.join(format!("{name}.overlay.png"));
            overlay(img, map).save(&path).with_context(|| format!("writing {}", path.display())).data()?;
        }
        let (py, px) = map.peak();
        summary
            .write_record([
                entry.id.as_str(),
                &entry.view,
                &map.source_score.to_string(),
                &mask.count_set().to_string(),
                &py.to_string(),
                &px.to_string(),
            ])
            .data()?;
    }
    summary.flush().data()?;
    println!("localised {} image(s) into {}", images.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Image blended half-and-half with a red heat layer.
fn overlay(image: &Tensor, map: &SaliencyMap) -> RgbImage {
    let (c, h, w) = image.chw().expect("images are [C,H,W]");
    let plane = h * w;
    let px = |ch: usize, i: usize| image.data()[ch.min(c - 1) * plane + i];
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let heat = map.values[i];
        let mix = |base: f32, layer: f32| ((0.5 * base + 0.5 * layer).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([mix(px(0, i), heat), mix(px(1, i), 0.0), mix(px(2, i), 0.0)])
    })
}
