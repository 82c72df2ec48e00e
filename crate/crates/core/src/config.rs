//! Versioned run configuration shared by the CLI subcommands.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::detect::DetectConfig;
use crate::error::{Error, Result};
use crate::forecast::EnsembleWeights;
use crate::ingest::DEFAULT_SMOOTHING_WINDOW;
use crate::models::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub zone_id: String,
    /// Pixel or zone CSV; smoothed with `smoothing_window` on load (use 1 for an already smoothed file).
    pub series: PathBuf,
    /// Last day of the baseline span.
    pub training_end: NaiveDate,
    #[serde(default = "default_smoothing")]
    pub smoothing_window: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub weights: EnsembleWeights,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_smoothing() -> usize {
    DEFAULT_SMOOTHING_WINDOW
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn new(zone_id: impl Into<String>, series: PathBuf, training_end: NaiveDate) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            zone_id: zone_id.into(),
            series,
            training_end,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
            train: TrainConfig::default(),
            weights: EnsembleWeights::default(),
            detect: DetectConfig::default(),
            ground_truth: None,
            out_dir: default_out(),
        }
    }

    /// Reads a config; relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.series);
        resolve(&mut cfg.out_dir);
        if let Some(g) = cfg.ground_truth.as_mut() {
            resolve(g);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.smoothing_window == 0 {
            return Err(Error::Config("smoothing window must be at least 1".into()));
        }
        self.train.validate()?;
        self.weights.normalized()?;
        let d = &self.detect;
        if !(d.t_percent > 0.0 && d.t_percent < 100.0) {
            return Err(Error::Config(format!("T% = {} outside (0, 100)", d.t_percent)));
        }
        if d.segments.min_persistence == 0 {
            return Err(Error::Config("min_persistence must be at least 1".into()));
        }
        if !(d.recovery.fraction > 0.0) {
            return Err(Error::Config("recovery band must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"version": 1, "zone_id": "z", "series": "zone.csv", "training_end": "2015-07-19"}"#,
        )
        .unwrap();
        assert_eq!(cfg.train.input_window, 60);
        assert_eq!(cfg.detect.t_percent, 25.0);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_version_and_fields_are_rejected() {
        let mut cfg = RunConfig::new("z", "a.csv".into(), NaiveDate::from_ymd_opt(2015, 1, 1).unwrap());
        cfg.version = 2;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let typo = r#"{"version": 1, "zone_id": "z", "series": "a", "training_end": "2015-01-01", "sed": 3}"#;
        assert!(serde_json::from_str::<RunConfig>(typo).is_err());
    }
}
