//! Offline re-joining of tracks split by a tracking gap.
//!
//! A later track is folded into an earlier chain when it starts shortly after
//! the chain terminated, near the chain's extrapolated position, and at a
//! similar box scale. Observation intervals never overlap within a chain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::raster::BBox;

/// Number of trailing observations used to estimate a chain's velocity.
const VELOCITY_WINDOW: usize = 5;

/// Observed boxes of one track over a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackHistory {
    pub id: u64,
    /// `(frame index, box)` in increasing frame order.
    pub observations: Vec<(usize, BBox)>,
    /// Frame at which the tracker deleted the track; `None` if it was alive
    /// at the end of the video.
    pub ended_at: Option<usize>,
    /// Whether the track ever reached confirmed status.
    pub confirmed: bool,
}

impl TrackHistory {
    pub fn first_frame(&self) -> Option<usize> {
        self.observations.first().map(|o| o.0)
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.observations.last().map(|o| o.0)
    }

    /// Frame the track stopped existing: deletion frame or last observation.
    pub fn end_frame(&self) -> Option<usize> {
        self.ended_at.or(self.last_frame())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeConfig {
    /// Largest allowed gap, in frames, between a chain's end and the next start.
    pub gap_max: usize,
    /// Allowed extrapolation error in units of the new track's box height.
    pub dist_max: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            gap_max: 6,
            dist_max: 1.0,
            scale_min: 0.5,
            scale_max: 2.0,
        }
    }
}

struct Chain {
    root: u64,
    observations: Vec<(usize, BBox)>,
    end: usize,
}

impl Chain {
    fn last(&self) -> (usize, BBox) {
        *self.observations.last().expect("chains are non-empty")
    }

    fn extrapolate(&self, frame: usize) -> (f64, f64) {
        let (last_frame, last_box) = self.last();
        let (lx, ly) = last_box.center();
        let start = self.observations.len().saturating_sub(VELOCITY_WINDOW);
        let (first_frame, first_box) = self.observations[start];
        if last_frame == first_frame {
            return (lx, ly);
        }
        let (fx, fy) = first_box.center();
        let dt = (last_frame - first_frame) as f64;
        let steps = frame as f64 - last_frame as f64;
        (lx + (lx - fx) / dt * steps, ly + (ly - fy) / dt * steps)
    }
}

/// Maps every track id to the id it survives under. Unconfirmed or empty
/// histories map to themselves. The mapping is transitively closed.
pub fn merge_fragmented_tracks(
    histories: &[TrackHistory],
    cfg: &MergeConfig,
) -> BTreeMap<u64, u64> {
    let mut remap: BTreeMap<u64, u64> = histories.iter().map(|h| (h.id, h.id)).collect();
    let mut order: Vec<&TrackHistory> = histories
        .iter()
        .filter(|h| h.confirmed && !h.observations.is_empty())
        .collect();
    order.sort_by_key(|h| (h.first_frame(), h.id));

    let mut chains: Vec<Chain> = Vec::new();
    for h in order {
        let (start, first_box) = h.observations[0];
        let (bx, by) = first_box.center();
        let limit = cfg.dist_max * first_box.h;
        let mut best: Option<(f64, usize)> = None;
        for (ci, chain) in chains.iter().enumerate() {
            let (last_frame, last_box) = chain.last();
            if last_frame >= start || start.saturating_sub(chain.end) > cfg.gap_max {
                continue;
            }
            let sw = first_box.w / last_box.w;
            let sh = first_box.h / last_box.h;
            let in_scale = |s: f64| s >= cfg.scale_min && s <= cfg.scale_max;
            if !in_scale(sw) || !in_scale(sh) {
                continue;
            }
            let (px, py) = chain.extrapolate(start);
            let dist = ((px - bx).powi(2) + (py - by).powi(2)).sqrt();
            if dist > limit {
                continue;
            }
            if best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, ci));
            }
        }
        match best {
            Some((_, ci)) => {
                let chain = &mut chains[ci];
                remap.insert(h.id, chain.root);
                chain.observations.extend_from_slice(&h.observations);
                chain.end = h.end_frame().unwrap_or(start);
            }
            None => chains.push(Chain {
                root: h.id,
                observations: h.observations.clone(),
                end: h.end_frame().unwrap_or(start),
            }),
        }
    }
    remap
}

/// Concatenates histories under their surviving ids.
pub fn apply_remap(histories: &[TrackHistory], remap: &BTreeMap<u64, u64>) -> Vec<TrackHistory> {
    let mut merged: BTreeMap<u64, TrackHistory> = BTreeMap::new();
    let mut sorted: Vec<&TrackHistory> = histories.iter().collect();
    sorted.sort_by_key(|h| (h.first_frame(), h.id));
    for h in sorted {
        let root = remap.get(&h.id).copied().unwrap_or(h.id);
        let entry = merged.entry(root).or_insert_with(|| TrackHistory {
            id: root,
            observations: Vec::new(),
            ended_at: None,
            confirmed: false,
        });
        entry.observations.extend_from_slice(&h.observations);
        entry.ended_at = h.ended_at;
        entry.confirmed |= h.confirmed;
    }
    merged.into_values().collect()
}
