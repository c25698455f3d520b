//! Track-to-detection association: matching cascade over confirmed tracks
//! followed by an IoU pass for tentative and just-missed tracks.

use std::collections::BTreeSet;

use crate::detection::Detection;
use crate::raster::BBox;

use super::appearance::AppearanceFeature;
use super::assignment::{solve_assignment, CostMatrix};
use super::kalman::KalmanFilter;
use super::{Track, TrackStatus, TrackerConfig};

/// Outcome of one association round. Every track and detection lands in
/// exactly one of the three lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(track id, detection ordinal)`.
    pub matches: Vec<(u64, usize)>,
    pub unmatched_tracks: Vec<u64>,
    pub unmatched_detections: Vec<usize>,
}

fn min_cosine_distance(track: &Track, feature: Option<&AppearanceFeature<f64>>) -> f64 {
    match feature {
        Some(f) => track
            .gallery
            .iter()
            .map(|g| g.cosine_distance(f))
            .fold(None, |acc: Option<f64>, d| {
                Some(acc.map_or(d, |a| a.min(d)))
            })
            .unwrap_or(1.0),
        None => 1.0,
    }
}

/// Blended motion/appearance cost for one cascade level; pairs outside the
/// Mahalanobis gate are forbidden.
fn cascade_costs(
    tracks: &[&Track],
    detections: &[Detection],
    features: &[Option<AppearanceFeature<f64>>],
    det_indices: &[usize],
    kf: &KalmanFilter<f64>,
    cfg: &TrackerConfig,
) -> CostMatrix<f64> {
    let mut costs = CostMatrix::new(tracks.len(), det_indices.len(), 0.0);
    for (r, track) in tracks.iter().enumerate() {
        for (c, &d) in det_indices.iter().enumerate() {
            let gate = kf.gating_distance(&track.state, detections[d].bbox.to_xyah());
            match gate {
                Ok(dist) if dist <= cfg.gate_threshold => {
                    let motion = dist / cfg.gate_threshold;
                    let appearance = min_cosine_distance(track, features[d].as_ref());
                    costs.set(
                        r,
                        c,
                        cfg.lambda_motion * motion + (1.0 - cfg.lambda_motion) * appearance,
                    );
                }
                _ => costs.forbid(r, c),
            }
        }
    }
    costs
}

/// Associates predicted tracks with this frame's detections.
///
/// Confirmed tracks are matched level by level in order of increasing
/// `time_since_update`; each level is an optimal assignment on the blended
/// cost. Tentative tracks, plus confirmed tracks missed only in the previous
/// frame, are then matched on `1 - IoU` with IoU at least `cfg.iou_min`.
pub fn associate(
    tracks: &[Track],
    detections: &[Detection],
    features: &[Option<AppearanceFeature<f64>>],
    kf: &KalmanFilter<f64>,
    cfg: &TrackerConfig,
) -> Assignment {
    let mut out = Assignment::default();
    let mut remaining: Vec<usize> = (0..detections.len()).collect();
    let mut matched_tracks = BTreeSet::new();

    let confirmed: Vec<&Track> = tracks
        .iter()
        .filter(|t| t.status == TrackStatus::Confirmed)
        .collect();
    for level in 1..=cfg.max_age.max(1) {
        if remaining.is_empty() {
            break;
        }
        let level_tracks: Vec<&Track> = confirmed
            .iter()
            .copied()
            .filter(|t| t.time_since_update == level)
            .collect();
        if level_tracks.is_empty() {
            continue;
        }
        let costs = cascade_costs(&level_tracks, detections, features, &remaining, kf, cfg);
        let pairs = solve_assignment(&costs);
        let mut taken = BTreeSet::new();
        for (r, c) in pairs {
            out.matches.push((level_tracks[r].id, remaining[c]));
            matched_tracks.insert(level_tracks[r].id);
            taken.insert(c);
        }
        remaining = remaining
            .iter()
            .enumerate()
            .filter(|(c, _)| !taken.contains(c))
            .map(|(_, &d)| d)
            .collect();
    }

    let iou_tracks: Vec<&Track> = tracks
        .iter()
        .filter(|t| !matched_tracks.contains(&t.id))
        .filter(|t| {
            t.status == TrackStatus::Tentative
                || (t.status == TrackStatus::Confirmed && t.time_since_update == 1)
        })
        .collect();
    if !iou_tracks.is_empty() && !remaining.is_empty() {
        let mut costs = CostMatrix::new(iou_tracks.len(), remaining.len(), 0.0);
        for (r, t) in iou_tracks.iter().enumerate() {
            let predicted = BBox::from_xyah(t.state.measurement());
            for (c, &d) in remaining.iter().enumerate() {
                let iou = predicted.iou(&detections[d].bbox);
                if iou >= cfg.iou_min {
                    costs.set(r, c, 1.0 - iou);
                } else {
                    costs.forbid(r, c);
                }
            }
        }
        let mut taken = BTreeSet::new();
        for (r, c) in solve_assignment(&costs) {
            out.matches.push((iou_tracks[r].id, remaining[c]));
            matched_tracks.insert(iou_tracks[r].id);
            taken.insert(c);
        }
        remaining = remaining
            .iter()
            .enumerate()
            .filter(|(c, _)| !taken.contains(c))
            .map(|(_, &d)| d)
            .collect();
    }

    out.unmatched_tracks = tracks
        .iter()
        .map(|t| t.id)
        .filter(|id| !matched_tracks.contains(id))
        .collect();
    out.unmatched_detections = remaining;
    out
}
