//! Per-track ROI stacks and best-frame selection by sharpness x similarity.
//!
//! Sharpness is the Laplacian variance of the grayscale crop at native
//! resolution. Similarity is the mean SSIM of an entry against every other
//! entry of its stack, all resized to the stack's median crop size.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::metrics::{laplacian_variance, ssim, SSIM_WINDOW};
use crate::raster::{BBox, PixelRect, Plane};

/// Extra context kept on each side of a box, as a fraction of its size.
pub const CROP_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorConfig {
    pub similarity_floor: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            similarity_floor: 0.4,
        }
    }
}

/// Pixel region covered by `bbox` grown by the crop margin and clamped to
/// the image. `None` when it misses the image.
pub fn crop_rect(width: u32, height: u32, bbox: &BBox) -> Option<PixelRect> {
    if !bbox.is_finite() || bbox.w <= 0.0 || bbox.h <= 0.0 {
        return None;
    }
    let mx = CROP_MARGIN * bbox.w;
    let my = CROP_MARGIN * bbox.h;
    let x0 = (bbox.x - mx).floor().max(0.0);
    let y0 = (bbox.y - my).floor().max(0.0);
    let x1 = (bbox.right() + mx).ceil().min(width as f64);
    let y1 = (bbox.bottom() + my).ceil().min(height as f64);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some(PixelRect {
        x: x0 as u32,
        y: y0 as u32,
        w: (x1 - x0) as u32,
        h: (y1 - y0) as u32,
    })
}

/// Pixel-exact copy of the margin-grown box. `None` signals the entry should
/// be skipped.
pub fn crop_roi(image: &RgbImage, bbox: &BBox) -> Option<(RgbImage, PixelRect)> {
    let rect = crop_rect(image.width(), image.height(), bbox)?;
    let roi = image::imageops::crop_imm(image, rect.x, rect.y, rect.w, rect.h).to_image();
    Some((roi, rect))
}

/// Product of sharpness and similarity, unrounded.
#[inline]
pub fn score_entry(sharpness: f64, similarity: f64) -> f64 {
    sharpness * similarity
}

/// Laplacian variance of the BT.601 grayscale crop; crops thinner than the
/// kernel have no measurable sharpness (0).
pub fn sharpness(roi: &RgbImage) -> f64 {
    laplacian_variance(&Plane::<f64>::from_rgb(roi)).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiEntry {
    pub track_id: u64,
    pub frame_index: usize,
    pub roi: RgbImage,
    /// Crop region in frame coordinates.
    pub rect: PixelRect,
    /// Detection box the crop was taken around.
    pub bbox: BBox,
    pub sharpness: f64,
    pub similarity: f64,
    pub score: f64,
}

impl RoiEntry {
    /// Entry with sharpness measured and similarity defaulting to 1.
    pub fn new(
        track_id: u64,
        frame_index: usize,
        roi: RgbImage,
        rect: PixelRect,
        bbox: BBox,
    ) -> Self {
        let sharpness = sharpness(&roi);
        Self {
            track_id,
            frame_index,
            roi,
            rect,
            bbox,
            sharpness,
            similarity: 1.0,
            score: sharpness,
        }
    }

    pub fn set_similarity(&mut self, similarity: f64) {
        self.similarity = similarity;
        self.score = score_entry(self.sharpness, similarity);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiStack {
    pub track_id: u64,
    entries: Vec<RoiEntry>,
}

impl RoiStack {
    pub fn new(track_id: u64) -> Self {
        Self {
            track_id,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[RoiEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry, keeping frame order.
    pub fn push(&mut self, entry: RoiEntry) {
        assert_eq!(
            entry.track_id, self.track_id,
            "entry belongs to another stack"
        );
        let pos = self
            .entries
            .partition_point(|e| e.frame_index <= entry.frame_index);
        self.entries.insert(pos, entry);
    }

    /// Median crop width and height (lower median), at least the SSIM window.
    pub fn reference_size(&self) -> (usize, usize) {
        let median = |mut v: Vec<u32>| {
            v.sort_unstable();
            v.get(v.len().saturating_sub(1) / 2).copied().unwrap_or(0) as usize
        };
        let w = median(self.entries.iter().map(|e| e.roi.width()).collect());
        let h = median(self.entries.iter().map(|e| e.roi.height()).collect());
        (w.max(SSIM_WINDOW), h.max(SSIM_WINDOW))
    }

    fn normalized(&self) -> Vec<Plane<f64>> {
        let (w, h) = self.reference_size();
        self.entries
            .iter()
            .map(|e| Plane::<f64>::from_rgb(&e.roi).resize_bilinear(w, h))
            .collect()
    }

    /// Mean SSIM of every entry against all others; a lone entry scores 1.
    pub fn similarities(&self) -> Vec<f64> {
        let n = self.entries.len();
        if n <= 1 {
            return vec![1.0; n];
        }
        let planes = self.normalized();
        let mut sums = vec![0.0; n];
        for i in 0..n {
            for j in i + 1..n {
                let s = ssim(&planes[i], &planes[j]).expect("planes share the reference size");
                sums[i] += s;
                sums[j] += s;
            }
        }
        sums.into_iter().map(|s| s / (n - 1) as f64).collect()
    }

    /// Similarity of a single entry.
    pub fn compute_similarity(&self, ordinal: usize) -> f64 {
        let n = self.entries.len();
        assert!(ordinal < n, "entry ordinal out of range");
        if n == 1 {
            return 1.0;
        }
        let planes = self.normalized();
        let total: f64 = (0..n)
            .filter(|&j| j != ordinal)
            .map(|j| ssim(&planes[ordinal], &planes[j]).expect("planes share the reference size"))
            .sum();
        total / (n - 1) as f64
    }

    /// Fills similarity and score for every entry.
    pub fn score(&mut self) {
        let sims = self.similarities();
        for (e, s) in self.entries.iter_mut().zip(sims) {
            e.set_similarity(s);
        }
    }

    /// Writes `<frame>.png` per entry and `scores.tsv` into `dir`.
    pub fn dump(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut table = String::from("frame\tsimilarity\tsharpness\tscore\n");
        for e in &self.entries {
            e.roi
                .save(dir.join(format!("{}.png", e.frame_index)))
                .map_err(io::Error::other)?;
            let _ = writeln!(
                table,
                "{}\t{:.2}\t{:.2}\t{:.2}",
                e.frame_index, e.similarity, e.sharpness, e.score
            );
        }
        fs::write(dir.join("scores.tsv"), table)
    }
}

/// Highest-scoring entry among those with similarity at or above the floor;
/// earliest frame wins ties. Falls back to all entries when none survive.
pub fn select_best(stack: &RoiStack, similarity_floor: f64) -> Option<&RoiEntry> {
    fn best_of<'a>(iter: impl Iterator<Item = &'a RoiEntry>) -> Option<&'a RoiEntry> {
        iter.fold(None::<&RoiEntry>, |best, e| match best {
            Some(b) if b.score > e.score => Some(b),
            Some(b) if b.score == e.score && b.frame_index <= e.frame_index => Some(b),
            _ => Some(e),
        })
    }
    best_of(
        stack
            .entries
            .iter()
            .filter(|e| e.similarity >= similarity_floor),
    )
    .or_else(|| best_of(stack.entries.iter()))
}
