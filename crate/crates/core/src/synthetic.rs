//! Deterministic synthetic scenes: textured elliptical leaf sprites with
//! damage blobs, scripted motion, occlusion windows and motion-blurred
//! frames, plus oracle detector and segmenter backends answering from the
//! scene's ground truth.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BackendError, Detection, Detector};
use crate::ingest::Frame;
use crate::raster::{BBox, BinaryMask, PixelRect, Plane};
use crate::segmentation::{SegmentRequest, Segmenter};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("scene description: {0}")]
    Parse(String),
    #[error("{0}")]
    Io(#[from] io::Error),
}

fn default_fps() -> f64 {
    3.0
}

fn default_background() -> [u8; 3] {
    [38, 34, 30]
}

/// Declarative scene description (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_background")]
    pub background: [u8; 3],
    /// Box blur radius applied to `blurred_frames`.
    #[serde(default)]
    pub blur_radius: u32,
    #[serde(default)]
    pub blurred_frames: Vec<usize>,
    #[serde(default)]
    pub leaves: Vec<LeafSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafSpec {
    pub id: u32,
    /// Semi-axes `(horizontal, vertical)` in pixels.
    pub axes: [f64; 2],
    pub color: [u8; 3],
    /// Centre at frame 0.
    pub start: [f64; 2],
    /// Centre displacement per frame.
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Scripted per-frame centres; overrides `start`/`velocity`. Frames past
    /// the end hold the last position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub damage: Vec<DamageBlob>,
    /// Inclusive frame intervals during which the leaf is hidden.
    #[serde(default)]
    pub occlusions: Vec<[usize; 2]>,
    /// Detector confidence reported by the oracle (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageBlob {
    /// Centre in ellipse-normalised coordinates (unit disc = leaf outline).
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(default = "default_damage_color")]
    pub color: [u8; 3],
}

fn default_damage_color() -> [u8; 3] {
    [128, 84, 40]
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SceneError> {
        toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        if self.width == 0 || self.height == 0 {
            return bad("frame size must be non-zero".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive".into());
        }
        let mut ids: Vec<u32> = self.leaves.iter().map(|l| l.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("leaf ids must be unique".into());
        }
        for leaf in &self.leaves {
            if !(leaf.axes[0] > 0.0 && leaf.axes[1] > 0.0) {
                return bad(format!("leaf {}: axes must be positive", leaf.id));
            }
            for blob in &leaf.damage {
                let [u, v] = blob.center;
                if u * u + v * v > 1.0 {
                    return bad(format!("leaf {}: damage centre outside the leaf", leaf.id));
                }
                if !(blob.radius > 0.0) {
                    return bad(format!("leaf {}: damage radius must be positive", leaf.id));
                }
            }
            if let Some(c) = leaf.confidence {
                if !(0.0..=1.0).contains(&c) {
                    return bad(format!("leaf {}: confidence outside [0, 1]", leaf.id));
                }
            }
            if matches!(&leaf.positions, Some(p) if p.is_empty()) {
                return bad(format!("leaf {}: positions list is empty", leaf.id));
            }
            if leaf.occlusions.iter().any(|w| w[0] > w[1]) {
                return bad(format!("leaf {}: occlusion window reversed", leaf.id));
            }
        }
        Ok(())
    }
}

/// Ground-truth box of one visible leaf in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub leaf_id: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub frame_index: usize,
    pub boxes: Vec<TruthBox>,
}

/// Rasterized reference areas of one leaf, independent of frame clipping
/// and occlusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafTruth {
    pub leaf_id: u32,
    pub leaf_area_px: usize,
    pub damage_area_px: usize,
    pub ratio_pct: f64,
}

/// Validated scene with rendering and ground-truth queries.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
}

#[inline]
fn hash3(seed: u64, a: i64, b: i64) -> u64 {
    // splitmix64 over the packed inputs
    let mut z = seed
        ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bilinearly interpolated lattice noise in [0, 1).
fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    let (iu, iv) = (u.floor(), v.floor());
    let (fu, fv) = (u - iu, v - iv);
    let (su, sv) = (fu * fu * (3.0 - 2.0 * fu), fv * fv * (3.0 - 2.0 * fv));
    let corner = |a: i64, b: i64| (hash3(seed, a, b) >> 11) as f64 / (1u64 << 53) as f64;
    let (iu, iv) = (iu as i64, iv as i64);
    let top = corner(iu, iv) * (1.0 - su) + corner(iu + 1, iv) * su;
    let bottom = corner(iu, iv + 1) * (1.0 - su) + corner(iu + 1, iv + 1) * su;
    top * (1.0 - sv) + bottom * sv
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self, SceneError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn frame_count(&self) -> usize {
        self.spec.frame_count
    }

    pub fn leaf_center(&self, leaf: &LeafSpec, frame: usize) -> (f64, f64) {
        match &leaf.positions {
            Some(p) => {
                let [x, y] = p[frame.min(p.len() - 1)];
                (x, y)
            }
            None => (
                leaf.start[0] + leaf.velocity[0] * frame as f64,
                leaf.start[1] + leaf.velocity[1] * frame as f64,
            ),
        }
    }

    pub fn is_visible(&self, leaf: &LeafSpec, frame: usize) -> bool {
        frame < self.spec.frame_count
            && !leaf
                .occlusions
                .iter()
                .any(|w| (w[0]..=w[1]).contains(&frame))
    }

    fn in_leaf(leaf: &LeafSpec, center: (f64, f64), x: i64, y: i64) -> bool {
        let u = (x as f64 + 0.5 - center.0) / leaf.axes[0];
        let v = (y as f64 + 0.5 - center.1) / leaf.axes[1];
        u * u + v * v <= 1.0
    }

    fn damage_blob_at(leaf: &LeafSpec, center: (f64, f64), x: i64, y: i64) -> Option<&DamageBlob> {
        leaf.damage.iter().find(|b| {
            let bx = center.0 + b.center[0] * leaf.axes[0];
            let by = center.1 + b.center[1] * leaf.axes[1];
            let dx = x as f64 + 0.5 - bx;
            let dy = y as f64 + 0.5 - by;
            dx * dx + dy * dy <= b.radius * b.radius
        })
    }

    /// Topmost visible leaf covering pixel `(x, y)` in `frame`.
    pub fn owner_at(&self, frame: usize, x: i64, y: i64) -> Option<usize> {
        self.spec
            .leaves
            .iter()
            .enumerate()
            .rev()
            .find(|(_, l)| {
                self.is_visible(l, frame) && Self::in_leaf(l, self.leaf_center(l, frame), x, y)
            })
            .map(|(i, _)| i)
    }

    fn leaf_extent(leaf: &LeafSpec, center: (f64, f64)) -> (i64, i64, i64, i64) {
        (
            (center.0 - leaf.axes[0]).floor() as i64 - 1,
            (center.1 - leaf.axes[1]).floor() as i64 - 1,
            (center.0 + leaf.axes[0]).ceil() as i64 + 1,
            (center.1 + leaf.axes[1]).ceil() as i64 + 1,
        )
    }

    /// Tight bounds of the pixels leaf `index` owns in `frame`.
    fn owned_bounds(&self, index: usize, frame: usize) -> Option<PixelRect> {
        let leaf = &self.spec.leaves[index];
        if !self.is_visible(leaf, frame) {
            return None;
        }
        let c = self.leaf_center(leaf, frame);
        let (x0, y0, x1, y1) = Self::leaf_extent(leaf, c);
        let (w, h) = (self.spec.width as i64, self.spec.height as i64);
        let mut bounds: Option<(i64, i64, i64, i64)> = None;
        for y in y0.max(0)..=y1.min(h - 1) {
            for x in x0.max(0)..=x1.min(w - 1) {
                if Self::in_leaf(leaf, c, x, y) && self.owner_at(frame, x, y) == Some(index) {
                    bounds = Some(match bounds {
                        None => (x, y, x, y),
                        Some((a, b, cc, d)) => (a.min(x), b.min(y), cc.max(x), d.max(y)),
                    });
                }
            }
        }
        bounds.map(|(a, b, c2, d)| PixelRect {
            x: a as u32,
            y: b as u32,
            w: (c2 - a + 1) as u32,
            h: (d - b + 1) as u32,
        })
    }

    pub fn truth(&self, frame: usize) -> FrameTruth {
        let boxes = (0..self.spec.leaves.len())
            .filter_map(|i| {
                let rect = self.owned_bounds(i, frame)?;
                let leaf = &self.spec.leaves[i];
                Some(TruthBox {
                    leaf_id: leaf.id,
                    bbox: rect.to_bbox(),
                    confidence: leaf.confidence.unwrap_or(1.0),
                })
            })
            .collect();
        FrameTruth {
            frame_index: frame,
            boxes,
        }
    }

    /// Reference areas: the leaf rasterized alone, unclipped, at the
    /// position of its first visible frame (frame 0 if never visible).
    pub fn leaf_truth(&self, leaf: &LeafSpec) -> LeafTruth {
        let frame = (0..self.spec.frame_count)
            .find(|&f| self.is_visible(leaf, f))
            .unwrap_or(0);
        let c = self.leaf_center(leaf, frame);
        let (x0, y0, x1, y1) = Self::leaf_extent(leaf, c);
        let (mut area, mut damage) = (0usize, 0usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if Self::in_leaf(leaf, c, x, y) {
                    area += 1;
                    if Self::damage_blob_at(leaf, c, x, y).is_some() {
                        damage += 1;
                    }
                }
            }
        }
        LeafTruth {
            leaf_id: leaf.id,
            leaf_area_px: area,
            damage_area_px: damage,
            ratio_pct: if area == 0 {
                0.0
            } else {
                100.0 * damage as f64 / area as f64
            },
        }
    }

    pub fn leaf_truths(&self) -> Vec<LeafTruth> {
        self.spec
            .leaves
            .iter()
            .map(|l| self.leaf_truth(l))
            .collect()
    }

    /// Leaves that never overlap the frame.
    pub fn warnings(&self) -> Vec<String> {
        self.spec
            .leaves
            .iter()
            .enumerate()
            .filter(|(i, _)| (0..self.spec.frame_count).all(|f| self.owned_bounds(*i, f).is_none()))
            .map(|(_, l)| format!("leaf {} is never visible", l.id))
            .collect()
    }

    fn leaf_texture(&self, leaf: &LeafSpec, center: (f64, f64), x: i64, y: i64) -> [u8; 3] {
        let dx = x as f64 + 0.5 - center.0;
        let dy = y as f64 + 0.5 - center.1;
        let seed = self.spec.seed.wrapping_add(leaf.id as u64);
        if let Some(blob) = Self::damage_blob_at(leaf, center, x, y) {
            let n = 24.0 * (value_noise(seed ^ 0xD4, dx / 2.5, dy / 2.5) - 0.5);
            return blob
                .color
                .map(|c| (c as f64 + n).round().clamp(0.0, 255.0) as u8);
        }
        let mut shade = 1.0;
        // midrib along the long axis, lateral veins at a slant
        let (along, across, half) = if leaf.axes[0] >= leaf.axes[1] {
            (dx, dy, leaf.axes[0])
        } else {
            (dy, dx, leaf.axes[1])
        };
        let vein = |d: f64, width: f64| (1.0 - d / width).clamp(0.0, 1.0);
        let lateral = (along * 0.7 + across.abs()).rem_euclid(9.0);
        let lateral = lateral.min(9.0 - lateral);
        shade += 0.45 * vein(across.abs(), 1.6);
        if along.abs() < half * 0.9 {
            shade += 0.3 * vein(lateral, 1.4);
        }
        let n = 56.0 * (value_noise(seed, dx / 4.0, dy / 4.0) - 0.5)
            + 8.0 * (value_noise(seed ^ 0x5A, dx / 2.0, dy / 2.0) - 0.5);
        leaf.color
            .map(|c| (c as f64 * shade + n).round().clamp(0.0, 255.0) as u8)
    }

    /// Renders one frame.
    pub fn render_frame(&self, frame: usize) -> RgbImage {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut img = RgbImage::from_pixel(w, h, Rgb(self.spec.background));
        for leaf in &self.spec.leaves {
            if !self.is_visible(leaf, frame) {
                continue;
            }
            let c = self.leaf_center(leaf, frame);
            let (x0, y0, x1, y1) = Self::leaf_extent(leaf, c);
            for y in y0.max(0)..=y1.min(h as i64 - 1) {
                for x in x0.max(0)..=x1.min(w as i64 - 1) {
                    if Self::in_leaf(leaf, c, x, y) {
                        img.put_pixel(x as u32, y as u32, Rgb(self.leaf_texture(leaf, c, x, y)));
                    }
                }
            }
        }
        if self.spec.blur_radius > 0 && self.spec.blurred_frames.contains(&frame) {
            img = box_blur(&img, self.spec.blur_radius);
        }
        img
    }

    /// All frames with their ground truth, rendered in parallel.
    pub fn render(&self) -> Vec<(RgbImage, FrameTruth)> {
        (0..self.spec.frame_count)
            .into_par_iter()
            .map(|f| (self.render_frame(f), self.truth(f)))
            .collect()
    }

    /// Leaf index whose ground-truth box in `frame` overlaps `bbox` most.
    fn leaf_for_box(&self, frame: usize, bbox: &BBox) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..self.spec.leaves.len() {
            if let Some(rect) = self.owned_bounds(i, frame) {
                let iou = rect.to_bbox().iou(bbox);
                if iou > 0.0 && best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, i));
                }
            }
        }
        best.map(|(_, i)| i)
    }

    /// Visible pixels of the leaf matched to `bbox`, inside `rect`.
    pub fn leaf_mask(&self, frame: usize, rect: PixelRect, bbox: &BBox) -> BinaryMask {
        let Some(index) = self.leaf_for_box(frame, bbox) else {
            return BinaryMask::new(rect.w as usize, rect.h as usize);
        };
        BinaryMask::from_fn(rect.w as usize, rect.h as usize, |x, y| {
            self.owner_at(frame, rect.x as i64 + x as i64, rect.y as i64 + y as i64) == Some(index)
        })
    }

    /// Damage-blob pixels of the leaf matched to `bbox`, inside `rect`,
    /// not clipped to the leaf outline.
    pub fn damage_mask(&self, frame: usize, rect: PixelRect, bbox: &BBox) -> BinaryMask {
        let Some(index) = self.leaf_for_box(frame, bbox) else {
            return BinaryMask::new(rect.w as usize, rect.h as usize);
        };
        let leaf = &self.spec.leaves[index];
        let c = self.leaf_center(leaf, frame);
        BinaryMask::from_fn(rect.w as usize, rect.h as usize, |x, y| {
            Self::damage_blob_at(leaf, c, rect.x as i64 + x as i64, rect.y as i64 + y as i64)
                .is_some()
        })
    }

    /// Writes `frames/NNNNNN.png`, `scene.toml` and `truth/` sidecars.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SceneError> {
        let frames_dir = dir.join("frames");
        let truth_dir = dir.join("truth");
        let masks_dir = truth_dir.join("masks");
        fs::create_dir_all(&frames_dir)?;
        fs::create_dir_all(&masks_dir)?;
        fs::write(dir.join("scene.toml"), self.spec.to_toml())?;

        let rendered = self.render();
        let mut boxes = String::from("frame\tleaf_id\tx\ty\tw\th\tconfidence\n");
        for (f, (img, truth)) in rendered.iter().enumerate() {
            img.save(frames_dir.join(format!("{f:06}.png")))
                .map_err(io::Error::other)?;
            for b in &truth.boxes {
                let _ = writeln!(
                    boxes,
                    "{f}\t{}\t{}\t{}\t{}\t{}\t{}",
                    b.leaf_id, b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h, b.confidence
                );
            }
        }
        fs::write(truth_dir.join("boxes.tsv"), boxes)?;

        let mut leaves = String::from("leaf_id\tleaf_area_px\tdamage_area_px\tratio_pct\n");
        for t in self.leaf_truths() {
            let _ = writeln!(
                leaves,
                "{}\t{}\t{}\t{:.2}",
                t.leaf_id, t.leaf_area_px, t.damage_area_px, t.ratio_pct
            );
        }
        fs::write(truth_dir.join("leaves.tsv"), leaves)?;

        for (i, leaf) in self.spec.leaves.iter().enumerate() {
            let Some(frame) =
                (0..self.spec.frame_count).find(|&f| self.owned_bounds(i, f).is_some())
            else {
                continue;
            };
            let rect = self
                .owned_bounds(i, frame)
                .expect("visible in chosen frame");
            let bbox = rect.to_bbox();
            self.leaf_mask(frame, rect, &bbox)
                .to_luma()
                .save(masks_dir.join(format!("{}_leaf.png", leaf.id)))
                .map_err(io::Error::other)?;
            self.damage_mask(frame, rect, &bbox)
                .and(&self.leaf_mask(frame, rect, &bbox))
                .to_luma()
                .save(masks_dir.join(format!("{}_damage.png", leaf.id)))
                .map_err(io::Error::other)?;
        }
        Ok(())
    }
}

/// Mean filter over a `(2r+1)^2` window with clamped borders.
pub fn box_blur(img: &RgbImage, radius: u32) -> RgbImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = radius as i64;
    let n = (2 * r + 1) as u32;
    let src = img.as_raw();
    let mut tmp = vec![0u32; (w * h * 3) as usize];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0u32;
                for k in -r..=r {
                    let sx = (x + k).clamp(0, w - 1);
                    acc += src[((y * w + sx) * 3 + c) as usize] as u32;
                }
                tmp[((y * w + x) * 3 + c) as usize] = acc;
            }
        }
    }
    let mut out = vec![0u8; (w * h * 3) as usize];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0u32;
                for k in -r..=r {
                    let sy = (y + k).clamp(0, h - 1);
                    acc += tmp[((sy * w + x) * 3 + c) as usize];
                }
                let d = n * n;
                out[((y * w + x) * 3 + c) as usize] = ((acc + d / 2) / d) as u8;
            }
        }
    }
    RgbImage::from_raw(w as u32, h as u32, out).expect("buffer sized to image")
}

fn check_geometry(scene: &Scene, width: u32, height: u32) -> Result<(), BackendError> {
    if scene.spec.width != width || scene.spec.height != height {
        return Err(BackendError::Inference(format!(
            "oracle scene is {}x{} but frame is {width}x{height}",
            scene.spec.width, scene.spec.height
        )));
    }
    Ok(())
}

/// Detector answering with the scene's ground-truth boxes, keyed by the
/// frame's source ordinal.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    scene: Arc<Scene>,
}

impl OracleDetector {
    pub fn new(scene: Arc<Scene>) -> Self {
        Self { scene }
    }
}

impl Detector for OracleDetector {
    fn raw_detections(&self, frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        check_geometry(&self.scene, frame.width(), frame.height())?;
        Ok(self
            .scene
            .truth(frame.source_index)
            .boxes
            .into_iter()
            .map(|b| Detection {
                bbox: b.bbox,
                confidence: b.confidence,
                frame_index: frame.index,
            })
            .collect())
    }
}

/// Segmenter answering with ground-truth leaf and damage rasters cropped to
/// the ROI.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    scene: Arc<Scene>,
}

impl OracleSegmenter {
    pub fn new(scene: Arc<Scene>) -> Self {
        Self { scene }
    }

    fn to_plane(mask: &BinaryMask) -> Plane<f32> {
        Plane::from_fn(mask.width(), mask.height(), |x, y| {
            if mask.get(x, y) {
                1.0
            } else {
                0.0
            }
        })
    }
}

impl Segmenter for OracleSegmenter {
    fn leaf_probabilities(&self, req: &SegmentRequest<'_>) -> Result<Plane<f32>, BackendError> {
        let mask = self.scene.leaf_mask(req.source_frame, req.rect, &req.bbox);
        Ok(Self::to_plane(&mask))
    }

    fn damage_probabilities(&self, req: &SegmentRequest<'_>) -> Result<Plane<f32>, BackendError> {
        let mask = self
            .scene
            .damage_mask(req.source_frame, req.rect, &req.bbox);
        Ok(Self::to_plane(&mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::DetectorConfig;
    use crate::roi::crop_roi;
    use crate::segmentation::{segment_damage, segment_leaf, SegmenterConfig};

    fn leaf(id: u32, start: [f64; 2]) -> LeafSpec {
        LeafSpec {
            id,
            axes: [30.0, 20.0],
            color: [60, 140, 50],
            start,
            velocity: [0.0, 0.0],
            positions: None,
            damage: vec![],
            occlusions: vec![],
            confidence: None,
        }
    }

    fn spec(leaves: Vec<LeafSpec>) -> SceneSpec {
        SceneSpec {
            seed: 11,
            frame_count: 5,
            width: 200,
            height: 160,
            fps: 3.0,
            background: default_background(),
            blur_radius: 0,
            blurred_frames: vec![],
            leaves,
        }
    }

    #[test]
    fn stationary_leaf_frames_identical() {
        let scene = Scene::new(spec(vec![leaf(1, [100.0, 80.0])])).unwrap();
        let out = scene.render();
        assert_eq!(out.len(), 5);
        for (img, truth) in &out {
            assert_eq!(img, &out[0].0);
            assert_eq!(truth.boxes, out[0].1.boxes);
        }
        assert_eq!(out[0].1.boxes.len(), 1);
        let b = out[0].1.boxes[0].bbox;
        assert_eq!((b.w, b.h), (60.0, 40.0));
    }

    #[test]
    fn render_is_reproducible() {
        let mut l = leaf(1, [50.0, 50.0]);
        l.velocity = [3.0, 1.0];
        let s = spec(vec![l, leaf(2, [150.0, 100.0])]);
        let a = Scene::new(s.clone()).unwrap().render();
        let b = Scene::new(s).unwrap().render();
        assert!(a.iter().zip(&b).all(|(x, y)| x.0.as_raw() == y.0.as_raw()));
    }

    #[test]
    fn occlusion_removes_truth_boxes() {
        let mut l = leaf(1, [100.0, 80.0]);
        l.occlusions = vec![[1, 3]];
        let scene = Scene::new(spec(vec![l])).unwrap();
        let counts: Vec<usize> = (0..5).map(|f| scene.truth(f).boxes.len()).collect();
        assert_eq!(counts, vec![1, 0, 0, 0, 1]);
    }

    /// Independent pixel count of a disc-in-ellipse overlap.
    fn brute_force_ratio(a: f64, b: f64, bu: f64, bv: f64, r: f64) -> f64 {
        let (cx, cy) = (500.0, 500.0);
        let (mut leafpx, mut dmg) = (0, 0);
        for y in 0..1000 {
            for x in 0..1000 {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                if ((px - cx) / a).powi(2) + ((py - cy) / b).powi(2) <= 1.0 {
                    leafpx += 1;
                    if (px - cx - bu * a).powi(2) + (py - cy - bv * b).powi(2) <= r * r {
                        dmg += 1;
                    }
                }
            }
        }
        100.0 * dmg as f64 / leafpx as f64
    }

    #[test]
    fn blob_covering_tenth_of_area() {
        // ellipse 40x30 has area ~3770 px; a disc of radius 10.96 covers ~10%
        let mut l = leaf(1, [100.0, 80.0]);
        l.axes = [40.0, 30.0];
        l.damage = vec![DamageBlob {
            center: [0.0, 0.0],
            radius: (0.1 * 40.0 * 30.0f64).sqrt(),
            color: [130, 80, 40],
        }];
        let scene = Scene::new(spec(vec![l])).unwrap();
        let t = scene.leaf_truth(&scene.spec().leaves[0]);
        let expected = brute_force_ratio(40.0, 30.0, 0.0, 0.0, (1200.0f64 * 0.1).sqrt());
        assert!((t.ratio_pct - expected).abs() < 1e-9);
        assert!((t.ratio_pct - 10.0).abs() < 0.5);
    }

    #[test]
    fn oracle_backends_follow_ground_truth() {
        let mut a = leaf(1, [50.0, 50.0]);
        a.damage = vec![
            DamageBlob {
                center: [0.3, 0.0],
                radius: 4.0,
                color: [120, 80, 40],
            },
            DamageBlob {
                center: [-0.4, 0.2],
                radius: 3.0,
                color: [220, 220, 200],
            },
        ];
        let mut c = leaf(3, [100.0, 130.0]);
        c.confidence = Some(0.3);
        let scene = Arc::new(Scene::new(spec(vec![a, leaf(2, [150.0, 60.0]), c])).unwrap());
        let frame = Frame::new(0, 0, scene.render_frame(0)).unwrap();
        let det = OracleDetector::new(scene.clone());
        assert_eq!(
            det.detect(&frame, &DetectorConfig::default())
                .unwrap()
                .len(),
            3
        );
        let floor = DetectorConfig {
            confidence_floor: 0.5,
            ..Default::default()
        };
        let dets = det.detect(&frame, &floor).unwrap();
        assert_eq!(dets.len(), 2);
        assert!(dets.iter().all(|d| d.confidence == 1.0));

        let d = dets.iter().find(|d| d.bbox.x < 40.0).unwrap();
        let (roi, rect) = crop_roi(&frame.image, &d.bbox).unwrap();
        let seg = OracleSegmenter::new(scene.clone());
        let req = SegmentRequest {
            roi: &roi,
            source_frame: 0,
            rect,
            bbox: d.bbox,
        };
        let cfg = SegmenterConfig::default();
        let leaf_mask = segment_leaf(&seg, &req, &cfg).unwrap();
        let truth = scene.leaf_truth(&scene.spec().leaves[0]);
        assert_eq!(leaf_mask.count(), truth.leaf_area_px);
        let damage = segment_damage(&seg, &req, &cfg).unwrap();
        assert_eq!(damage.and(&leaf_mask).count(), truth.damage_area_px);
    }

    #[test]
    fn empty_frame_has_no_detections() {
        let scene = Arc::new(Scene::new(spec(vec![])).unwrap());
        let frame = Frame::new(0, 0, scene.render_frame(0)).unwrap();
        assert!(OracleDetector::new(scene)
            .detect(&frame, &DetectorConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn never_visible_leaf_warns() {
        let scene = Scene::new(spec(vec![leaf(1, [-500.0, -500.0])])).unwrap();
        assert_eq!(scene.warnings().len(), 1);
    }

    #[test]
    fn blur_lowers_sharpness() {
        let mut s = spec(vec![leaf(1, [100.0, 80.0])]);
        s.blur_radius = 2;
        s.blurred_frames = vec![1];
        let scene = Scene::new(s).unwrap();
        let sharp = crate::roi::sharpness(&scene.render_frame(0));
        let blurred = crate::roi::sharpness(&scene.render_frame(1));
        assert!(blurred < sharp);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let mut l = leaf(4, [10.0, 20.0]);
        l.occlusions = vec![[2, 4]];
        l.damage = vec![DamageBlob {
            center: [0.1, 0.1],
            radius: 2.0,
            color: [1, 2, 3],
        }];
        let s = spec(vec![l]);
        assert_eq!(SceneSpec::from_toml(&s.to_toml()).unwrap(), s);
        assert!(SceneSpec::from_toml(
            "seed = 1\nframe_count = 1\nwidth = 2\nheight = 2\nbogus = 3"
        )
        .is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut l = leaf(1, [0.0, 0.0]);
        l.damage = vec![DamageBlob {
            center: [0.9, 0.9],
            radius: 1.0,
            color: [0, 0, 0],
        }];
        assert!(Scene::new(spec(vec![l])).is_err());
        assert!(Scene::new(spec(vec![leaf(1, [0.0, 0.0]), leaf(1, [5.0, 5.0])])).is_err());
    }
}
