//! End-to-end analysis: ingest, detect, track, stack ROIs, pick the best
//! view per leaf, segment it twice, measure damage, then fold fragmented
//! tracks together.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::RunConfig;
use crate::detection::{BackendError, Detection, Detector};
use crate::ingest::{Frame, FrameSource, Ingest, IngestError};
use crate::report::LeafReport;
use crate::roi::{crop_roi, select_best, RoiEntry, RoiStack};
use crate::segmentation::{
    damage_ratio, preprocess, segment_damage, segment_leaf, SegmentRequest, Segmenter,
};
use crate::tracker::{merge_fragmented_tracks, TrackHistory, Tracker, TrackerError};

pub const THREADS_ENV: &str = "PLANTDOCTOR_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error("{path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Outcome of one segmented stack, before identity merging.
#[derive(Debug, Clone)]
struct StackResult {
    track_id: u64,
    frame: usize,
    score: f64,
    report: LeafReport,
    masks: Option<(crate::raster::BinaryMask, crate::raster::BinaryMask)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub leaves: usize,
    pub mean_ratio_pct: Option<f64>,
    pub max_ratio_pct: Option<f64>,
}

impl Summary {
    pub fn of(reports: &[LeafReport]) -> Self {
        let ratios: Vec<f64> = reports.iter().filter_map(|r| r.ratio_pct).collect();
        Self {
            leaves: reports.len(),
            mean_ratio_pct: (!ratios.is_empty())
                .then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
            max_ratio_pct: ratios.iter().copied().reduce(f64::max),
        }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}%"));
        write!(
            f,
            "leaves found: {}, mean damage ratio: {}, max damage ratio: {}",
            self.leaves,
            pct(self.mean_ratio_pct),
            pct(self.max_ratio_pct)
        )
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    /// One row per surviving confirmed track, sorted by id.
    pub reports: Vec<LeafReport>,
    /// Confirmed track histories as produced by the tracker.
    pub tracks: Vec<TrackHistory>,
    /// Raw track id to surviving id.
    pub remap: BTreeMap<u64, u64>,
    pub frames: usize,
    pub summary: Summary,
}

/// Reads `PLANTDOCTOR_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(format!("{THREADS_ENV}: {e}")),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            )),
        },
    }
}

/// Sizes the global worker pool. Must run before any parallel work.
pub fn limit_threads(threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn output_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    }
}

pub struct Pipeline<'a> {
    config: &'a RunConfig,
    detector: &'a dyn Detector,
    segmenter: &'a dyn Segmenter,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: &'a RunConfig,
        detector: &'a dyn Detector,
        segmenter: &'a dyn Segmenter,
    ) -> Result<Self, PipelineError> {
        config
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Self {
            config,
            detector,
            segmenter,
        })
    }

    /// Runs on the current rayon pool.
    pub fn run<S: FrameSource>(&self, source: S) -> Result<Analysis, PipelineError> {
        let chunk = rayon::current_num_threads().max(1) * 2;
        let mut frames = Ingest::new(source, &self.config.ingest)?;
        let mut tracker = Tracker::new(self.config.tracker);
        let mut stacks: BTreeMap<u64, RoiStack> = BTreeMap::new();
        let mut frame_count = 0;

        loop {
            let batch: Vec<Frame> = frames.by_ref().take(chunk).collect::<Result<_, _>>()?;
            if batch.is_empty() {
                break;
            }
            frame_count += batch.len();
            let detections: Vec<Vec<Detection>> = batch
                .par_iter()
                .map(|f| self.detector.detect(f, &self.config.detector))
                .collect::<Result<_, _>>()?;
            for (frame, dets) in batch.iter().zip(&detections) {
                self.track_frame(&mut tracker, &mut stacks, frame, dets)?;
            }
        }

        let tracks: Vec<TrackHistory> = tracker
            .finish()
            .into_iter()
            .filter(|h| h.confirmed && !h.observations.is_empty())
            .collect();
        let confirmed: BTreeSet<u64> = tracks.iter().map(|h| h.id).collect();
        stacks.retain(|id, s| confirmed.contains(id) && !s.is_empty());

        let remap = if self.config.merge.enabled {
            merge_fragmented_tracks(&tracks, &self.config.merge.params())
        } else {
            BTreeMap::new()
        };

        let mut stacks: Vec<RoiStack> = stacks.into_values().collect();
        let results: Vec<StackResult> = stacks
            .par_iter_mut()
            .map(|stack| {
                stack.score();
                self.measure(stack)
            })
            .collect::<Result<_, _>>()?;

        if let Some(dir) = &self.config.output.dump_stacks {
            for stack in &stacks {
                stack
                    .dump(&dir.join(stack.track_id.to_string()))
                    .map_err(output_err(dir))?;
            }
        }

        let mut best: BTreeMap<u64, StackResult> = BTreeMap::new();
        for mut r in results {
            let id = remap.get(&r.track_id).copied().unwrap_or(r.track_id);
            r.report.leaf_id = id;
            let better = match best.get(&id) {
                None => true,
                Some(b) => {
                    r.score > b.score
                        || (r.score == b.score && (r.frame, r.track_id) < (b.frame, b.track_id))
                }
            };
            if better {
                best.insert(id, r);
            }
        }

        if let Some(dir) = &self.config.output.dump_masks {
            fs::create_dir_all(dir).map_err(output_err(dir))?;
            for (id, r) in &best {
                if let Some((leaf, damage)) = &r.masks {
                    for (name, mask) in [("leaf", leaf.clone()), ("damage", damage.and(leaf))] {
                        let path = dir.join(format!("{id}_{name}.png"));
                        mask.to_luma()
                            .save(&path)
                            .map_err(|e| output_err(&path)(io::Error::other(e)))?;
                    }
                }
            }
        }

        let reports: Vec<LeafReport> = best.into_values().map(|r| r.report).collect();
        Ok(Analysis {
            summary: Summary::of(&reports),
            reports,
            tracks,
            remap,
            frames: frame_count,
        })
    }

    fn track_frame(
        &self,
        tracker: &mut Tracker,
        stacks: &mut BTreeMap<u64, RoiStack>,
        frame: &Frame,
        detections: &[Detection],
    ) -> Result<(), PipelineError> {
        tracker.step(frame.index, detections, |d| {
            crop_roi(&frame.image, &d.bbox).map(|(roi, _)| roi)
        })?;
        for track in tracker.tracks() {
            let Some(&(f, bbox)) = track.history().observations.last() else {
                continue;
            };
            if f != frame.index {
                continue;
            }
            if let Some((roi, rect)) = crop_roi(&frame.image, &bbox) {
                stacks
                    .entry(track.id)
                    .or_insert_with(|| RoiStack::new(track.id))
                    .push(RoiEntry::new(track.id, frame.source_index, roi, rect, bbox));
            }
        }
        Ok(())
    }

    fn measure(&self, stack: &RoiStack) -> Result<StackResult, PipelineError> {
        let entry = select_best(stack, self.config.selector.similarity_floor)
            .expect("stacks are non-empty");
        let prepared = preprocess(&entry.roi);
        let req = SegmentRequest {
            roi: &prepared,
            source_frame: entry.frame_index,
            rect: entry.rect,
            bbox: entry.bbox,
        };
        let cfg = &self.config.segmenter;
        let leaf = segment_leaf(self.segmenter, &req, cfg)?;
        let damage = segment_damage(self.segmenter, &req, cfg)?;
        let report = match damage_ratio(&leaf, &damage) {
            Ok(a) => LeafReport::measured(
                stack.track_id,
                entry.frame_index,
                a.leaf_area_px,
                a.damage_area_px,
                a.ratio_pct,
            ),
            Err(_) => LeafReport::no_leaf(stack.track_id, entry.frame_index),
        };
        Ok(StackResult {
            track_id: stack.track_id,
            frame: entry.frame_index,
            score: entry.score,
            report,
            masks: Some((leaf, damage)),
        })
    }
}
