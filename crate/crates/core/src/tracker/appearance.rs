//! Handcrafted appearance descriptor used for re-identification: a 16x16
//! colour thumbnail concatenated with 64-bin per-channel histograms,
//! L2-normalised.

use image::RgbImage;

use crate::raster::resize_rgb_bilinear;
use crate::scalar::Scalar;

pub const THUMBNAIL_SIDE: u32 = 16;
pub const HISTOGRAM_BINS: usize = 64;
pub const FEATURE_LEN: usize = (THUMBNAIL_SIDE * THUMBNAIL_SIDE * 3) as usize + HISTOGRAM_BINS * 3;

/// Unit-norm appearance vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceFeature<T>(Vec<T>);

impl<T: Scalar> AppearanceFeature<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn norm(&self) -> T {
        self.0.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    /// `1 - cos(angle)` between two unit vectors.
    pub fn cosine_distance(&self, other: &Self) -> T {
        let dot = self
            .0
            .iter()
            .zip(&other.0)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        (T::one() - dot).max(T::zero())
    }
}

/// Descriptor of an ROI. Returns `None` for an empty raster.
pub fn appearance_feature<T: Scalar>(roi: &RgbImage) -> Option<AppearanceFeature<T>> {
    if roi.width() == 0 || roi.height() == 0 {
        return None;
    }
    let thumb = resize_rgb_bilinear(roi, THUMBNAIL_SIDE, THUMBNAIL_SIDE);
    let inv255 = T::lit(1.0 / 255.0);
    let mut v: Vec<T> = Vec::with_capacity(FEATURE_LEN);
    v.extend(thumb.as_raw().iter().map(|&b| T::lit(b as f64) * inv255));

    let mut hist = [[0usize; HISTOGRAM_BINS]; 3];
    for p in roi.pixels() {
        for c in 0..3 {
            hist[c][p.0[c] as usize * HISTOGRAM_BINS / 256] += 1;
        }
    }
    let total = T::from_usize_lossy(roi.width() as usize * roi.height() as usize);
    for channel in &hist {
        v.extend(channel.iter().map(|&n| T::from_usize_lossy(n) / total));
    }

    let norm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    if norm > T::zero() && norm.is_finite() {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        let uniform = T::one() / T::from_usize_lossy(FEATURE_LEN).sqrt();
        v.iter_mut().for_each(|x| *x = uniform);
    }
    Some(AppearanceFeature(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn two_tone(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, _| {
            if x < w / 2 {
                Rgb([20, 90, 30])
            } else {
                Rgb([200, 180, 60])
            }
        })
    }

    #[test]
    fn unit_norm_for_various_rois() {
        for img in [
            two_tone(31, 17),
            RgbImage::new(3, 3),
            RgbImage::from_pixel(1, 1, Rgb([255, 255, 255])),
        ] {
            let f = appearance_feature::<f64>(&img).unwrap();
            assert!((f.norm() - 1.0).abs() < 1e-9);
            assert_eq!(f.as_slice().len(), FEATURE_LEN);
        }
        assert!(appearance_feature::<f64>(&RgbImage::new(0, 4)).is_none());
    }

    #[test]
    fn identical_rois_have_zero_distance() {
        let a = appearance_feature::<f64>(&two_tone(40, 30)).unwrap();
        let b = appearance_feature::<f64>(&two_tone(40, 30)).unwrap();
        assert!(a.cosine_distance(&b) < 1e-12);
    }

    #[test]
    fn rotation_changes_descriptor() {
        let img = two_tone(40, 30);
        let rotated = image::imageops::rotate180(&img);
        let a = appearance_feature::<f64>(&img).unwrap();
        let b = appearance_feature::<f64>(&rotated).unwrap();
        assert!(a.cosine_distance(&b) > 0.05);
    }
}
