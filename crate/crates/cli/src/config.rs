//! Run configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fads::localize::{RegionParams, DEFAULT_SMOOTHING};
use fads::model::{AggregationKind, FitOptions, ScoreMethod, DEFAULT_SIGMA_FLOOR};
use fads::TapPoint;
use serde::{Deserialize, Serialize};

/// One ensemble member: a network description, its weights and the input
/// size it runs at. Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberConfig {
    pub graph: PathBuf,
    pub weights: PathBuf,
    pub input_size: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub pixel_threshold: f32,
    pub window: usize,
    pub region_threshold: f32,
    /// Gaussian smoothing of member saliency, in image pixels; 0 disables.
    pub smoothing: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        let r = RegionParams::default();
        Self {
            pixel_threshold: r.pixel_threshold,
            window: r.window,
            region_threshold: r.region_threshold,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

impl LocalizationConfig {
    pub fn region(&self) -> RegionParams {
        RegionParams {
            pixel_threshold: self.pixel_threshold,
            window: self.window,
            region_threshold: self.region_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub members: Vec<MemberConfig>,
    pub agg: AggregationKind,
    pub scoring: ScoreMethod,
    pub sigma_floor: f64,
    pub tap: TapPoint,
    pub grayscale: bool,
    pub localization: LocalizationConfig,
    pub seed: u64,
    pub folds: usize,
    #[serde(skip)]
    pub base: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            members: Vec::new(),
            agg: AggregationKind::Max,
            scoring: ScoreMethod::Max,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            tap: TapPoint::Pre,
            grayscale: true,
            localization: LocalizationConfig::default(),
            seed: 0,
            folds: 7,
            base: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            bail!("sigma_floor must be positive, got {}", self.sigma_floor);
        }
        if !(self.localization.smoothing >= 0.0 && self.localization.smoothing.is_finite()) {
            bail!("localization.smoothing must be non-negative");
        }
        self.localization.region().validate()?;
        if self.folds < 2 {
            bail!("folds must be at least 2");
        }
        for (i, m) in self.members.iter().enumerate() {
            if m.input_size.contains(&0) {
                bail!("member {i} has an empty input_size {:?}", m.input_size);
            }
            let channels = if self.grayscale { 1 } else { 3 };
            if m.input_size[0] != channels {
                bail!(
                    "member {i} expects {} channels but grayscale = {} gives {channels}",
                    m.input_size[0],
                    self.grayscale
                );
            }
        }
        Ok(())
    }

    /// Fails unless at least one member is configured.
    pub fn require_members(&self) -> anyhow::Result<()> {
        if self.members.is_empty() {
            bail!("the config lists no ensemble members");
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { agg: self.agg, tap: self.tap, sigma_floor: self.sigma_floor }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_takes_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.agg, AggregationKind::Max);
        assert_eq!(cfg.localization.window, 16);
        assert!(cfg.validate().is_ok());
        assert!(cfg.require_members().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"agg": "max", "agregation": 1}"#).is_err());
    }

    #[test]
    fn out_of_range_thresholds_fail_validation() {
        let cfg: RunConfig = serde_json::from_str(r#"{"localization": {"pixel_threshold": 2.0}}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
