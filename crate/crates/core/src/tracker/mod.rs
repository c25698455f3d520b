//! Per-leaf identity tracking: Kalman motion model, gated motion+appearance
//! association and track lifecycle, plus an offline pass that re-joins tracks
//! fragmented by tracking gaps.

pub mod appearance;
pub mod assignment;
pub mod association;
pub mod kalman;
pub mod merge;

use std::collections::VecDeque;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::Detection;

pub use appearance::{appearance_feature, AppearanceFeature};
pub use assignment::{solve_assignment, CostMatrix};
pub use association::{associate, Assignment};
pub use kalman::{KalmanFilter, KalmanState, NumericError};
pub use merge::{merge_fragmented_tracks, MergeConfig, TrackHistory};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrackerError {
    #[error("frame index {got} does not follow previous frame {previous}")]
    NonMonotonicFrame { previous: usize, got: usize },
    #[error("track {track}: {source}")]
    Numeric {
        track: u64,
        #[source]
        source: NumericError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Consecutive matches needed to confirm a track.
    pub n_init: usize,
    /// Missed frames tolerated before a confirmed track is deleted.
    pub max_age: usize,
    /// Chi-square gate on the 4-dof measurement Mahalanobis distance.
    pub gate_threshold: f64,
    /// Weight of the motion term in the blended cost.
    pub lambda_motion: f64,
    /// Stored appearance features per track.
    pub appearance_gallery: usize,
    /// Minimum IoU in the fallback matching pass.
    pub iou_min: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n_init: 3,
            max_age: 9,
            gate_threshold: 9.4877,
            lambda_motion: 0.2,
            appearance_gallery: 30,
            iou_min: 0.3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_init < 1 {
            return Err("tracker.n_init must be at least 1".into());
        }
        if self.max_age < 1 {
            return Err("tracker.max_age must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda_motion) {
            return Err("tracker.lambda_motion must lie in [0, 1]".into());
        }
        if !(self.gate_threshold > 0.0) {
            return Err("tracker.gate_threshold must be positive".into());
        }
        if self.appearance_gallery < 1 {
            return Err("tracker.appearance_gallery must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.iou_min) {
            return Err("tracker.iou_min must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub state: KalmanState<f64>,
    pub status: TrackStatus,
    /// Consecutive matches.
    pub hits: usize,
    /// Frames since creation.
    pub age: usize,
    pub time_since_update: usize,
    pub gallery: VecDeque<AppearanceFeature<f64>>,
    history: TrackHistory,
}

impl Track {
    pub fn history(&self) -> &TrackHistory {
        &self.history
    }
}

/// DeepSORT-style multi-target tracker. One instance per video; `step` calls
/// must arrive in frame order.
#[derive(Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    kf: KalmanFilter<f64>,
    tracks: Vec<Track>,
    finished: Vec<TrackHistory>,
    next_id: u64,
    last_frame: Option<usize>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            cfg,
            kf: KalmanFilter::default(),
            tracks: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Live (tentative or confirmed) tracks.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Histories of tracks deleted so far.
    pub fn finished(&self) -> &[TrackHistory] {
        &self.finished
    }

    /// Advances one frame. `roi_provider` supplies the crop of a detection for
    /// appearance description. Returns `(track id, detection)` for confirmed
    /// tracks matched in this frame.
    pub fn step(
        &mut self,
        frame_index: usize,
        detections: &[Detection],
        roi_provider: impl Fn(&Detection) -> Option<RgbImage>,
    ) -> Result<Vec<(u64, Detection)>, TrackerError> {
        if let Some(previous) = self.last_frame {
            if frame_index <= previous {
                return Err(TrackerError::NonMonotonicFrame {
                    previous,
                    got: frame_index,
                });
            }
        }
        self.last_frame = Some(frame_index);

        for track in &mut self.tracks {
            track.state =
                self.kf
                    .predict(&track.state)
                    .map_err(|source| TrackerError::Numeric {
                        track: track.id,
                        source,
                    })?;
            track.age += 1;
            track.time_since_update += 1;
        }

        let features: Vec<Option<AppearanceFeature<f64>>> = detections
            .iter()
            .map(|d| roi_provider(d).and_then(|roi| appearance_feature(&roi)))
            .collect();
        let assignment = associate(&self.tracks, detections, &features, &self.kf, &self.cfg);

        let mut output = Vec::new();
        for &(id, d) in &assignment.matches {
            let det = detections[d];
            let track = self
                .tracks
                .iter_mut()
                .find(|t| t.id == id)
                .expect("matched track exists");
            track.state = self
                .kf
                .update(&track.state, det.bbox.to_xyah())
                .map_err(|source| TrackerError::Numeric { track: id, source })?;
            track.hits += 1;
            track.time_since_update = 0;
            track.history.observations.push((frame_index, det.bbox));
            if let Some(f) = features[d].clone() {
                track.gallery.push_back(f);
                while track.gallery.len() > self.cfg.appearance_gallery {
                    track.gallery.pop_front();
                }
            }
            if track.status == TrackStatus::Tentative && track.hits >= self.cfg.n_init {
                track.status = TrackStatus::Confirmed;
                track.history.confirmed = true;
            }
            if track.status == TrackStatus::Confirmed {
                output.push((id, det));
            }
        }

        for &id in &assignment.unmatched_tracks {
            let track = self
                .tracks
                .iter_mut()
                .find(|t| t.id == id)
                .expect("unmatched track exists");
            track.hits = 0;
            if track.status == TrackStatus::Tentative || track.time_since_update > self.cfg.max_age
            {
                track.status = TrackStatus::Deleted;
                track.history.ended_at = Some(frame_index);
            }
        }

        for &d in &assignment.unmatched_detections {
            let det = detections[d];
            let id = self.next_id;
            self.next_id += 1;
            let confirmed = self.cfg.n_init <= 1;
            let mut gallery = VecDeque::new();
            if let Some(f) = features[d].clone() {
                gallery.push_back(f);
            }
            self.tracks.push(Track {
                id,
                state: self.kf.initiate(det.bbox.to_xyah()),
                status: if confirmed {
                    TrackStatus::Confirmed
                } else {
                    TrackStatus::Tentative
                },
                hits: 1,
                age: 1,
                time_since_update: 0,
                gallery,
                history: TrackHistory {
                    id,
                    observations: vec![(frame_index, det.bbox)],
                    ended_at: None,
                    confirmed,
                },
            });
            if confirmed {
                output.push((id, det));
            }
        }

        let (alive, dead): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.tracks)
            .into_iter()
            .partition(|t| t.status != TrackStatus::Deleted);
        self.tracks = alive;
        self.finished.extend(dead.into_iter().map(|t| t.history));

        output.sort_by_key(|(id, _)| *id);
        Ok(output)
    }

    /// Histories of every track ever created, ordered by id.
    pub fn finish(self) -> Vec<TrackHistory> {
        let mut all = self.finished;
        all.extend(self.tracks.into_iter().map(|t| t.history));
        all.sort_by_key(|h| h.id);
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BBox;
    use image::Rgb;

    fn det(frame: usize, x: f64, y: f64) -> Detection {
        Detection {
            bbox: BBox::new(x, y, 40.0, 60.0),
            confidence: 1.0,
            frame_index: frame,
        }
    }

    fn green(_: &Detection) -> Option<RgbImage> {
        Some(RgbImage::from_pixel(8, 8, Rgb([30, 160, 40])))
    }

    #[test]
    fn stationary_leaf_confirms_on_third_frame() {
        let mut t = Tracker::new(TrackerConfig::default());
        let mut first_confirmed = None;
        for f in 0..5 {
            let out = t.step(f, &[det(f, 100.0, 100.0)], green).unwrap();
            if !out.is_empty() && first_confirmed.is_none() {
                first_confirmed = Some(f);
            }
            if f >= 2 {
                assert_eq!(out.len(), 1);
                assert_eq!(out[0].0, 1);
            }
        }
        assert_eq!(first_confirmed, Some(2));
        let hist = t.finish();
        assert_eq!(hist.len(), 1);
        assert_eq!(hist[0].observations.len(), 5);
    }

    #[test]
    fn lost_track_deleted_after_max_age() {
        let mut t = Tracker::new(TrackerConfig::default());
        let last_seen = 4;
        for f in 0..=last_seen {
            t.step(f, &[det(f, 100.0, 100.0)], green).unwrap();
        }
        for f in last_seen + 1..last_seen + 10 {
            t.step(f, &[], green).unwrap();
            assert_eq!(t.tracks().len(), 1, "alive at frame {f}");
        }
        t.step(last_seen + 10, &[], green).unwrap();
        assert!(t.tracks().is_empty());
        assert_eq!(t.finished()[0].ended_at, Some(last_seen + 10));
    }

    #[test]
    fn tentative_track_dies_on_first_miss() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(0, &[det(0, 10.0, 10.0)], green).unwrap();
        t.step(1, &[], green).unwrap();
        assert!(t.tracks().is_empty());
        assert!(!t.finish()[0].confirmed);
    }

    #[test]
    fn ids_are_never_reused() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(0, &[det(0, 10.0, 10.0)], green).unwrap();
        t.step(1, &[], green).unwrap();
        t.step(2, &[det(2, 10.0, 10.0)], green).unwrap();
        assert_eq!(t.tracks()[0].id, 2);
    }

    #[test]
    fn non_monotonic_frames_rejected() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(3, &[], green).unwrap();
        assert_eq!(
            t.step(3, &[], green),
            Err(TrackerError::NonMonotonicFrame {
                previous: 3,
                got: 3
            })
        );
    }

    #[test]
    fn n_init_one_reports_immediately() {
        let cfg = TrackerConfig {
            n_init: 1,
            ..Default::default()
        };
        let mut t = Tracker::new(cfg);
        let out = t.step(0, &[det(0, 10.0, 10.0)], green).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn empty_inputs_give_empty_assignment() {
        let cfg = TrackerConfig::default();
        let a = associate(
            &[],
            &[det(0, 0.0, 0.0), det(0, 50.0, 0.0)],
            &[None, None],
            &KalmanFilter::default(),
            &cfg,
        );
        assert!(a.matches.is_empty());
        assert!(a.unmatched_tracks.is_empty());
        assert_eq!(a.unmatched_detections, vec![0, 1]);
    }
}
