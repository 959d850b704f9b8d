use std::process::ExitCode;

use fads::eval::per_part_score;
use fads::persist::load_ensemble;

use super::{create_out, csv_writer, optional_config};
use crate::fail::{Classify, CliResult, EXIT_ANOMALY};
use crate::manifest::Manifest;
use crate::pipeline::score_all;
use crate::ScoreArgs;

/// Writes `scores.csv` (one row per image) and `parts.csv` (views of one
/// id averaged).
pub fn run(args: &ScoreArgs) -> CliResult<ExitCode> {
    let cfg = optional_config(args.config.as_deref())?;
    if !args.boundary.is_finite() {
        return Err(crate::fail::usage_error("--boundary must be finite"));
    }
    let ensemble = load_ensemble(&args.model).usage()?;
    let manifest = Manifest::load(&args.manifest).data()?;
    let images = manifest.load_images(cfg.grayscale).data()?;
    let scores = score_all(&ensemble, &images).data()?;
    create_out(&args.out)?;

    let flagged = |s: f64| s > args.boundary;
    let mut w = csv_writer(&args.out.join("scores.csv"))?;
    w.write_record(["id", "view", "score", "anomalous", "label"]).data()?;
    for (e, &s) in manifest.entries.iter().zip(&scores) {
        let label = e.label.map_or("", |l| l.as_str());
        w.write_record([e.id.as_str(), &e.view, &s.to_string(), if flagged(s) { "1" } else { "0" }, label])
            .data()?;
    }
    w.flush().data()?;

    let parts = per_part_score(manifest.entries.iter().zip(&scores).map(|(e, &s)| (e.id.as_str(), s))).data()?;
    let mut w = csv_writer(&args.out.join("parts.csv"))?;
    w.write_record(["id", "views", "mean", "std", "anomalous"]).data()?;
    for p in &parts {
        w.write_record([
            p.part.as_str(),
            &p.views.to_string(),
            &p.mean.to_string(),
            &p.std.to_string(),
            if flagged(p.mean) { "1" } else { "0" },
        ])
        .data()?;
    }
    w.flush().data()?;

    let n_flagged = scores.iter().filter(|&&s| flagged(s)).count();
    println!("scored {} image(s); {} above boundary {}", scores.len(), n_flagged, args.boundary);
    if args.gate && n_flagged > 0 {
        return Ok(ExitCode::from(EXIT_ANOMALY));
    }
    Ok(ExitCode::SUCCESS)
}
