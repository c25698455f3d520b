//! Detector interface and post-processing of per-frame leaf boxes.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Frame;
use crate::raster::BBox;

/// Failure inside a detector or segmenter backend. Distinct from an empty result.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("model file {path}: {reason}")]
    ModelUnavailable { path: PathBuf, reason: String },
    #[error("backend inference failed: {0}")]
    Inference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub frame_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub confidence_floor: f64,
    pub max_detections_per_frame: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            confidence_floor: 0.25,
            max_detections_per_frame: 300,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(format!(
                "confidence_floor {} outside [0, 1]",
                self.confidence_floor
            ));
        }
        if self.max_detections_per_frame == 0 {
            return Err("max_detections_per_frame must be positive".into());
        }
        Ok(())
    }
}

/// Stateless per-frame detector. Implementations must tolerate concurrent
/// calls on distinct frames.
pub trait Detector: Send + Sync {
    /// Raw boxes for one frame, before clamping and filtering.
    fn raw_detections(&self, frame: &Frame) -> Result<Vec<Detection>, BackendError>;

    /// Boxes clamped to the frame, filtered by confidence, sorted by
    /// descending confidence and truncated.
    fn detect(&self, frame: &Frame, cfg: &DetectorConfig) -> Result<Vec<Detection>, BackendError> {
        let raw = self.raw_detections(frame)?;
        let clamped = raw
            .into_iter()
            .filter_map(|d| {
                let bbox = d.bbox.clamp_to(frame.width(), frame.height())?;
                Some(Detection {
                    bbox,
                    confidence: d.confidence.clamp(0.0, 1.0),
                    frame_index: frame.index,
                })
            })
            .collect();
        Ok(filter_detections(clamped, cfg))
    }
}

/// Keeps detections with `confidence >= floor`, stably sorted by descending
/// confidence, at most `max_detections_per_frame` of them.
pub fn filter_detections(dets: Vec<Detection>, cfg: &DetectorConfig) -> Vec<Detection> {
    let mut kept: Vec<Detection> = dets
        .into_iter()
        .filter(|d| d.confidence >= cfg.confidence_floor)
        .collect();
    kept.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    kept.truncate(cfg.max_detections_per_frame);
    kept
}

/// Backend selector as given on the command line: `oracle` or `model:<path>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendKind {
    Oracle,
    Model(PathBuf),
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Self::Oracle),
            _ => match s.strip_prefix("model:") {
                Some(p) if !p.is_empty() => Ok(Self::Model(PathBuf::from(p))),
                _ => Err(format!(
                    "unknown backend `{s}` (expected oracle or model:<path>)"
                )),
            },
        }
    }
}

impl TryFrom<String> for BackendKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<BackendKind> for String {
    fn from(k: BackendKind) -> String {
        match k {
            BackendKind::Oracle => "oracle".into(),
            BackendKind::Model(p) => format!("model:{}", p.display()),
        }
    }
}

/// Reads and sanity-checks a serialized model file.
pub(crate) fn load_model_bytes(path: &Path) -> Result<Vec<u8>, BackendError> {
    let bytes = std::fs::read(path).map_err(|e| BackendError::ModelUnavailable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if bytes.is_empty() {
        return Err(BackendError::ModelUnavailable {
            path: path.to_path_buf(),
            reason: "empty file".into(),
        });
    }
    Ok(bytes)
}

/// Serialized-network detector slot. This build carries no ONNX runtime, so
/// loading always fails with a backend error after validating the file.
#[derive(Debug)]
pub struct ModelDetector {
    _private: (),
}

impl ModelDetector {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        load_model_bytes(path)?;
        Err(BackendError::ModelUnavailable {
            path: path.to_path_buf(),
            reason: "no ONNX inference runtime is compiled into this build".into(),
        })
    }
}

impl Detector for ModelDetector {
    fn raw_detections(&self, _frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        Err(BackendError::Inference(
            "model backend not initialised".into(),
        ))
    }
}
