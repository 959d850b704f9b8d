pub mod eval;
pub mod fit;
pub mod localize;
pub mod score;
pub mod tools;

use std::path::Path;

use anyhow::Context;

use crate::config::RunConfig;
use crate::fail::{Classify, CliResult};

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    RunConfig::load(path).usage()
}

pub fn optional_config(path: Option<&Path>) -> CliResult<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), load_config)
}

pub fn create_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).data()
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display())).data()
}
