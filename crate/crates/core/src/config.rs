//! Run configuration file: one TOML table per stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BackendKind, DetectorConfig};
use crate::ingest::IngestConfig;
use crate::roi::SelectorConfig;
use crate::segmentation::SegmenterConfig;
use crate::tracker::{MergeConfig, TrackerConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub detector: BackendKind,
    pub segmenter: BackendKind,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            detector: BackendKind::Oracle,
            segmenter: BackendKind::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeSection {
    pub enabled: bool,
    pub gap_max: usize,
    pub dist_max: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl MergeSection {
    pub fn params(&self) -> MergeConfig {
        MergeConfig {
            gap_max: self.gap_max,
            dist_max: self.dist_max,
            scale_min: self.scale_min,
            scale_max: self.scale_max,
        }
    }
}

impl Default for MergeSection {
    fn default() -> Self {
        let m = MergeConfig::default();
        Self {
            enabled: true,
            gap_max: m.gap_max,
            dist_max: m.dist_max,
            scale_min: m.scale_min,
            scale_max: m.scale_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// CSV destination; standard output when absent.
    pub csv: Option<PathBuf>,
    pub dump_stacks: Option<PathBuf>,
    pub dump_masks: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub ingest: IngestConfig,
    pub backends: BackendConfig,
    pub detector: DetectorConfig,
    pub tracker: TrackerConfig,
    pub merge: MergeSection,
    pub selector: SelectorConfig,
    pub segmenter: SegmenterConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ingest
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.detector.validate().map_err(ConfigError::Invalid)?;
        self.tracker.validate().map_err(ConfigError::Invalid)?;
        self.segmenter.validate().map_err(ConfigError::Invalid)?;
        let m = &self.merge;
        if !(m.dist_max >= 0.0 && m.dist_max.is_finite()) {
            return Err(ConfigError::Invalid(
                "merge.dist_max must be a non-negative number".into(),
            ));
        }
        if !(m.scale_min > 0.0
            && m.scale_min <= 1.0
            && m.scale_max >= 1.0
            && m.scale_max.is_finite())
        {
            return Err(ConfigError::Invalid(
                "merge.scale_min must lie in (0, 1] and merge.scale_max in [1, inf)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.selector.similarity_floor) {
            return Err(ConfigError::Invalid(
                "selector.similarity_floor must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.ingest.target_fps, 3.0);
        assert_eq!(c.ingest.target_size, 640);
        assert!(c.merge.enabled);
        c.validate().unwrap();
    }

    #[test]
    fn sections_override_defaults() {
        let c = RunConfig::from_toml(
            "[tracker]\nmax_age = 4\n[merge]\nenabled = false\ngap_max = 2\n\
             [backends]\ndetector = \"model:net.onnx\"\n[output]\ncsv = \"out.csv\"\n",
        )
        .unwrap();
        assert_eq!(c.tracker.max_age, 4);
        assert!(!c.merge.enabled);
        assert_eq!(c.merge.gap_max, 2);
        assert_eq!(c.backends.detector, BackendKind::Model("net.onnx".into()));
        assert_eq!(c.output.csv, Some(PathBuf::from("out.csv")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[tracker]\nmax_agee = 4\n").is_err());
        assert!(RunConfig::from_toml("[trackr]\nmax_age = 4\n").is_err());
        assert!(RunConfig::from_toml("[merge]\nbogus = 1\n").is_err());
    }

    #[test]
    fn out_of_range_values_rejected() {
        let c = RunConfig::from_toml("[segmenter]\nbinarization_threshold = 1.5\n").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_toml("[ingest]\ntarget_fps = 0.0\n").unwrap();
        assert!(c.validate().is_err());
    }
}
