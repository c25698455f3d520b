//! Two-pass leaf health quantification: ROI preprocessing, leaf mask,
//! damage mask and the damage ratio between them.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{load_model_bytes, BackendError};
use crate::metrics::gaussian_kernel;
use crate::raster::{BBox, BinaryMask, PixelRect, Plane};

pub const BLUR_KERNEL: usize = 5;
pub const BLUR_SIGMA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SegmentationError {
    #[error("no leaf pixels detected")]
    NoLeaf,
    #[error("mask dimension mismatch")]
    DimensionMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    pub binarization_threshold: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            binarization_threshold: 0.5,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), String> {
        let t = self.binarization_threshold;
        if t > 0.0 && t < 1.0 {
            Ok(())
        } else {
            Err(format!(
                "segmenter.binarization_threshold {t} outside (0, 1)"
            ))
        }
    }
}

/// Everything a segmenter may look at for one ROI.
#[derive(Debug, Clone, Copy)]
pub struct SegmentRequest<'a> {
    /// Preprocessed crop.
    pub roi: &'a RgbImage,
    /// Ordinal of the frame in the original footage.
    pub source_frame: usize,
    /// Crop region in frame coordinates.
    pub rect: PixelRect,
    /// Detection box the crop was taken around.
    pub bbox: BBox,
}

/// Per-pixel probabilities for the two classes, each the size of the ROI.
/// Implementations must tolerate concurrent calls.
pub trait Segmenter: Send + Sync {
    fn leaf_probabilities(&self, req: &SegmentRequest<'_>) -> Result<Plane<f32>, BackendError>;
    fn damage_probabilities(&self, req: &SegmentRequest<'_>) -> Result<Plane<f32>, BackendError>;
}

/// Serialized-network segmenter slot; see [`crate::detection::ModelDetector`].
#[derive(Debug)]
pub struct ModelSegmenter {
    _private: (),
}

impl ModelSegmenter {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        load_model_bytes(path)?;
        Err(BackendError::ModelUnavailable {
            path: path.to_path_buf(),
            reason: "no ONNX inference runtime is compiled into this build".into(),
        })
    }
}

impl Segmenter for ModelSegmenter {
    fn leaf_probabilities(&self, _: &SegmentRequest<'_>) -> Result<Plane<f32>, BackendError> {
        Err(BackendError::Inference(
            "model backend not initialised".into(),
        ))
    }

    fn damage_probabilities(&self, _: &SegmentRequest<'_>) -> Result<Plane<f32>, BackendError> {
        Err(BackendError::Inference(
            "model backend not initialised".into(),
        ))
    }
}

/// 5x5 Gaussian blur (sigma 1) per channel, then luminance histogram
/// equalization with the original chroma.
pub fn preprocess(roi: &RgbImage) -> RgbImage {
    equalize_luminance(&gaussian_blur(roi, BLUR_KERNEL, BLUR_SIGMA))
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &RgbImage, size: usize, sigma: f64) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return img.clone();
    }
    let taps = gaussian_kernel::<f64>(size, sigma);
    let r = (size / 2) as isize;
    let src = img.as_raw();
    let mut tmp = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, &k) in taps.iter().enumerate() {
                    let sx = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += k * src[(y * w + sx) * 3 + c] as f64;
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, &k) in taps.iter().enumerate() {
                    let sy = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += k * tmp[(sy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::from_raw(w as u32, h as u32, out).expect("buffer sized to image")
}

fn to_ycbcr(p: [u8; 3]) -> (f64, f64, f64) {
    let (r, g, b) = (p[0] as f64, p[1] as f64, p[2] as f64);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    (y, cb, cr)
}

fn from_ycbcr(y: f64, cb: f64, cr: f64) -> [u8; 3] {
    let r = y + 1.402 * (cr - 128.0);
    let g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0);
    let b = y + 1.772 * (cb - 128.0);
    [r, g, b].map(|v| v.round().clamp(0.0, 255.0) as u8)
}

/// Lookup table `level -> round(255 * cdf(level))`. A histogram with a
/// single occupied level maps to the identity.
pub fn equalization_lut(hist: &[usize; 256]) -> [u8; 256] {
    let total: usize = hist.iter().sum();
    let occupied = hist.iter().filter(|&&n| n > 0).count();
    let mut lut = [0u8; 256];
    if total == 0 || occupied <= 1 {
        for (i, v) in lut.iter_mut().enumerate() {
            *v = i as u8;
        }
        return lut;
    }
    let mut cdf = 0usize;
    for (i, &n) in hist.iter().enumerate() {
        cdf += n;
        lut[i] = (255.0 * cdf as f64 / total as f64).round() as u8;
    }
    lut
}

/// Histogram-equalizes Y in YCbCr and recombines with the original chroma.
pub fn equalize_luminance(img: &RgbImage) -> RgbImage {
    let ycc: Vec<(f64, f64, f64)> = img.pixels().map(|p| to_ycbcr(p.0)).collect();
    let mut hist = [0usize; 256];
    for &(y, _, _) in &ycc {
        hist[y.round().clamp(0.0, 255.0) as usize] += 1;
    }
    let lut = equalization_lut(&hist);
    let mut out = RgbImage::new(img.width(), img.height());
    for (dst, &(y, cb, cr)) in out.pixels_mut().zip(&ycc) {
        let level = y.round().clamp(0.0, 255.0);
        let shifted = y - level + lut[level as usize] as f64;
        *dst = Rgb(from_ycbcr(shifted, cb, cr));
    }
    out
}

/// `p >= threshold`.
pub fn binarize(probabilities: &Plane<f32>, threshold: f64) -> BinaryMask {
    BinaryMask::from_fn(probabilities.width(), probabilities.height(), |x, y| {
        probabilities.get(x, y) as f64 >= threshold
    })
}

fn check_size(p: &Plane<f32>, roi: &RgbImage) -> Result<(), BackendError> {
    if p.width() != roi.width() as usize || p.height() != roi.height() as usize {
        return Err(BackendError::Inference(format!(
            "probability map {}x{} does not match ROI {}x{}",
            p.width(),
            p.height(),
            roi.width(),
            roi.height()
        )));
    }
    Ok(())
}

/// Pass 1: leaf pixels, reduced to the largest 4-connected component.
pub fn segment_leaf(
    backend: &dyn Segmenter,
    req: &SegmentRequest<'_>,
    cfg: &SegmenterConfig,
) -> Result<BinaryMask, BackendError> {
    let p = backend.leaf_probabilities(req)?;
    check_size(&p, req.roi)?;
    Ok(binarize(&p, cfg.binarization_threshold).largest_component())
}

/// Pass 2: damaged pixels, unfiltered.
pub fn segment_damage(
    backend: &dyn Segmenter,
    req: &SegmentRequest<'_>,
    cfg: &SegmenterConfig,
) -> Result<BinaryMask, BackendError> {
    let p = backend.damage_probabilities(req)?;
    check_size(&p, req.roi)?;
    Ok(binarize(&p, cfg.binarization_threshold))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamageAreas {
    pub leaf_area_px: usize,
    /// Damage pixels inside the leaf mask.
    pub damage_area_px: usize,
    pub ratio_pct: f64,
}

/// Damage share of the leaf area, in percent. Damage outside the leaf mask
/// is ignored.
pub fn damage_ratio(
    leaf: &BinaryMask,
    damage: &BinaryMask,
) -> Result<DamageAreas, SegmentationError> {
    if !leaf.same_shape(damage) {
        return Err(SegmentationError::DimensionMismatch);
    }
    let leaf_area = leaf.count();
    if leaf_area == 0 {
        return Err(SegmentationError::NoLeaf);
    }
    let inside = leaf.and(damage).count();
    Ok(DamageAreas {
        leaf_area_px: leaf_area,
        damage_area_px: inside,
        ratio_pct: 100.0 * inside as f64 / leaf_area as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_fixed_point() {
        for c in [[60u8, 140, 50], [0, 0, 0], [255, 255, 255], [128, 128, 128]] {
            let img = RgbImage::from_pixel(9, 7, Rgb(c));
            let out = preprocess(&img);
            assert_eq!(out, img, "colour {c:?}");
        }
    }

    #[test]
    fn two_level_histogram_spreads() {
        let img = RgbImage::from_fn(10, 10, |x, _| {
            if x < 5 {
                Rgb([50, 50, 50])
            } else {
                Rgb([200, 200, 200])
            }
        });
        let out = equalize_luminance(&img);
        let dark = out.get_pixel(0, 0).0[0] as i32;
        let bright = out.get_pixel(9, 0).0[0] as i32;
        assert!((dark - 127).abs() <= 1, "dark level {dark}");
        assert_eq!(bright, 255);
        let lut = equalization_lut(&{
            let mut h = [0usize; 256];
            h[50] = 50;
            h[200] = 50;
            h
        });
        assert_eq!((lut[50], lut[200]), (128, 255));
    }

    #[test]
    fn preprocess_keeps_dimensions() {
        let img = RgbImage::from_fn(13, 4, |x, y| Rgb([(x * 19) as u8, (y * 40) as u8, 7]));
        let out = preprocess(&img);
        assert_eq!(out.dimensions(), img.dimensions());
        assert_eq!(preprocess(&img), out);
    }

    struct Fixed {
        leaf: Plane<f32>,
        damage: Plane<f32>,
    }

    impl Segmenter for Fixed {
        fn leaf_probabilities(&self, _: &SegmentRequest<'_>) -> Result<Plane<f32>, BackendError> {
            Ok(self.leaf.clone())
        }
        fn damage_probabilities(&self, _: &SegmentRequest<'_>) -> Result<Plane<f32>, BackendError> {
            Ok(self.damage.clone())
        }
    }

    fn request(roi: &RgbImage) -> SegmentRequest<'_> {
        SegmentRequest {
            roi,
            source_frame: 0,
            rect: PixelRect {
                x: 0,
                y: 0,
                w: roi.width(),
                h: roi.height(),
            },
            bbox: BBox::new(0.0, 0.0, roi.width() as f64, roi.height() as f64),
        }
    }

    #[test]
    fn leaf_pass_keeps_largest_blob_damage_pass_keeps_all() {
        let roi = RgbImage::new(12, 6);
        let blobs = Plane::from_fn(12, 6, |x, y| {
            if (x < 2 && y < 2) || ((5..11).contains(&x) && (1..5).contains(&y)) {
                0.9f32
            } else {
                0.1
            }
        });
        let seg = Fixed {
            leaf: blobs.clone(),
            damage: blobs,
        };
        let cfg = SegmenterConfig::default();
        let leaf = segment_leaf(&seg, &request(&roi), &cfg).unwrap();
        assert_eq!(leaf.count(), 24);
        assert_eq!(leaf.component_count(), 1);
        let damage = segment_damage(&seg, &request(&roi), &cfg).unwrap();
        assert_eq!(damage.count(), 28);
    }

    #[test]
    fn blank_roi_gives_empty_leaf() {
        let roi = RgbImage::new(5, 5);
        let seg = Fixed {
            leaf: Plane::constant(5, 5, 0.0),
            damage: Plane::constant(5, 5, 0.0),
        };
        let leaf = segment_leaf(&seg, &request(&roi), &SegmenterConfig::default()).unwrap();
        assert_eq!(leaf.count(), 0);
    }

    #[test]
    fn mismatched_probability_map_is_backend_error() {
        let roi = RgbImage::new(5, 5);
        let seg = Fixed {
            leaf: Plane::constant(4, 5, 1.0),
            damage: Plane::constant(5, 5, 0.0),
        };
        assert!(segment_leaf(&seg, &request(&roi), &SegmenterConfig::default()).is_err());
    }

    #[test]
    fn ratio_examples() {
        let leaf = BinaryMask::from_fn(100, 100, |_, _| true);
        let damage = BinaryMask::from_fn(100, 100, |x, y| y == 0 && x < 100 || (y == 1 && x < 24));
        let r = damage_ratio(&leaf, &damage).unwrap();
        assert_eq!((r.leaf_area_px, r.damage_area_px), (10000, 124));
        assert!((r.ratio_pct - 1.24).abs() < 1e-12);

        let none = BinaryMask::new(100, 100);
        assert_eq!(damage_ratio(&leaf, &none).unwrap().ratio_pct, 0.0);

        let half = BinaryMask::from_fn(10, 10, |x, _| x < 5);
        let outside = BinaryMask::from_fn(10, 10, |x, _| x >= 5);
        assert_eq!(damage_ratio(&half, &outside).unwrap().ratio_pct, 0.0);
        assert_eq!(damage_ratio(&none, &none), Err(SegmentationError::NoLeaf));
        assert_eq!(
            damage_ratio(&half, &BinaryMask::new(3, 3)),
            Err(SegmentationError::DimensionMismatch)
        );
    }

    #[test]
    fn model_segmenter_missing_file() {
        assert!(matches!(
            ModelSegmenter::load(Path::new("/nonexistent/seg.onnx")),
            Err(BackendError::ModelUnavailable { .. })
        ));
    }
}
