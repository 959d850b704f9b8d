//! Dataset manifests: CSV with header `id,view,path,label,stratum`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fads::imaging::load_image;
use fads::{Label, Tensor};
use rayon::prelude::*;
use serde::Deserialize;

pub const HEADER: [&str; 5] = ["id", "view", "path", "label", "stratum"];

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub id: String,
    pub view: String,
    pub path: PathBuf,
    pub label: Option<Label>,
    pub stratum: String,
}

#[derive(Deserialize)]
struct Row {
    id: String,
    view: String,
    path: String,
    label: String,
    stratum: String,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<Entry>,
}

impl Manifest {
    /// Reads and validates a manifest. Relative image paths resolve against
    /// the manifest's directory and must exist.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("opening manifest {}", path.display()))?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != HEADER {
            bail!("manifest {} must have header `{}`, found `{}`", path.display(), HEADER.join(","), header.join(","));
        }
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row.with_context(|| format!("{} line {line}", path.display()))?;
            if row.id.is_empty() {
                bail!("{} line {line}: empty id", path.display());
            }
            if !seen.insert((row.id.clone(), row.view.clone())) {
                bail!("{} line {line}: duplicate (id, view) = ({}, {})", path.display(), row.id, row.view);
            }
            let label = Label::parse(&row.label).with_context(|| format!("{} line {line}", path.display()))?;
            let file = base.join(&row.path);
            if !file.is_file() {
                bail!("{} line {line}: image {} does not exist", path.display(), file.display());
            }
            entries.push(Entry { id: row.id, view: row.view, path: file, label, stratum: row.stratum });
        }
        Ok(Self { entries })
    }

    /// Decodes every image (grayscale or RGB) in manifest order.
    pub fn load_images(&self, grayscale: bool) -> anyhow::Result<Vec<Tensor>> {
        self.entries
            .par_iter()
            .map(|e| load_image(&e.path, grayscale).map_err(anyhow::Error::from))
            .collect()
    }
}

/// Writes a manifest with the standard header.
pub fn write(path: &Path, entries: &[(String, String, String, Option<Label>, String)]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(HEADER)?;
    for (id, view, file, label, stratum) in entries {
        w.write_record([id.as_str(), view, file, label.map_or("", |l| l.as_str()), stratum])?;
    }
    w.flush()?;
    Ok(())
}
