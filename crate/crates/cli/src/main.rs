//! `fads`: fit, score, localise and evaluate feature-statistics anomaly
//! detectors built on pretrained CNNs.

mod commands;
mod config;
mod fail;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::fail::{Classify, CliResult};

#[derive(Parser)]
#[command(name = "fads", version, about = "Anomaly detection from CNN filter statistics", long_about = None)]
struct Cli {
    /// Worker threads; 0 uses every core
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an ensemble on nominal images and write a model directory
    Fit(FitArgs),
    /// Score images with a fitted ensemble
    Score(ScoreArgs),
    /// Write saliency heatmaps and region masks
    Localize(LocalizeArgs),
    /// Run the stratified k-fold protocol on a labelled manifest
    Eval(EvalArgs),
    /// Write the seeded reference network and a starter config
    MakeRefnet(RefnetArgs),
    /// Write the seeded synthetic benchmark dataset
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model directory to create
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Run config; only `grayscale` is used when scoring
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ensemble file written by `fit`
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Scores above this are flagged anomalous
    #[arg(long, default_value_t = 1.0)]
    pub boundary: f64,
    /// Exit with status 3 when any image is flagged
    #[arg(long)]
    pub gate: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum HeatmapFormat {
    Png,
    Pgm,
}

#[derive(Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = HeatmapFormat::Png)]
    pub format: HeatmapFormat,
    /// Also write the heatmap blended onto the image at alpha 0.5
    #[arg(long)]
    pub overlay: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config fold count
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Args)]
pub struct RefnetArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Member input sizes listed in the starter config
    #[arg(long, value_delimiter = ',', default_values_t = [32, 64])]
    pub sizes: Vec<usize>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build().usage()?;
    pool.install(|| match cli.command {
        Command::Fit(a) => commands::fit::run(&a),
        Command::Score(a) => commands::score::run(&a),
        Command::Localize(a) => commands::localize::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
        Command::MakeRefnet(a) => commands::tools::make_refnet(&a),
        Command::Synth(a) => commands::tools::synth(&a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
