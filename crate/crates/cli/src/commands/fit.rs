use std::process::ExitCode;

use fads::Label;

use super::load_config;
use crate::fail::{data_error, Classify, CliResult};
use crate::manifest::Manifest;
use crate::pipeline::{fit_ensemble, load_members, write_model_dir};
use crate::FitArgs;

pub fn run(args: &FitArgs) -> CliResult<ExitCode> {
    let cfg = load_config(&args.config)?;
    let members = load_members(&cfg)?;
    let manifest = Manifest::load(&args.manifest).data()?;
    if let Some(e) = manifest.entries.iter().find(|e| e.label == Some(Label::Anomaly)) {
        return Err(data_error(format!(
            "training manifest may only hold nominal images; `{}` is labelled anomalous",
            e.id
        )));
    }
    let images = manifest.load_images(cfg.grayscale).data()?;
    let ensemble = fit_ensemble(&cfg, &members, &images)?;
    write_model_dir(&args.out, &members, &ensemble)?;
    println!(
        "fitted {} member(s) on {} image(s); normalisers {:?}",
        ensemble.members.len(),
        images.len(),
        ensemble.normalizers()
    );
    Ok(ExitCode::SUCCESS)
}
