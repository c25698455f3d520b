//! Raster containers shared across the pipeline: scalar planes, binary masks
//! and pixel-space boxes.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Single-channel image with scalar samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Plane<T> {
    /// Returns `None` when the dimensions are zero or do not match the sample count.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return None;
        }
        Some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "plane must be non-empty");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: T) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    /// ITU-R BT.601 luma of an RGB raster.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (r, g, b) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        Self::from_fn(img.width() as usize, img.height() as usize, |x, y| {
            let p = img.get_pixel(x as u32, y as u32).0;
            r * T::lit(p[0] as f64) + g * T::lit(p[1] as f64) + b * T::lit(p[2] as f64)
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear resampling to an exact target size (no aspect preservation).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Self::from_fn(width, height, |x, y| {
            let (x0, x1, fx) = sample_coord(x, sx, self.width);
            let (y0, y1, fy) = sample_coord(y, sy, self.height);
            let (fx, fy) = (T::lit(fx), T::lit(fy));
            let one = T::one();
            let top = self.get(x0, y0) * (one - fx) + self.get(x1, y0) * fx;
            let bottom = self.get(x0, y1) * (one - fx) + self.get(x1, y1) * fx;
            top * (one - fy) + bottom * fy
        })
    }
}

/// Source coordinate pair and interpolation weight for pixel-centre aligned
/// resampling.
#[inline]
pub(crate) fn sample_coord(dst: usize, scale: f64, src_len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Bilinear RGB resampling to an exact size. Returns a clone when the size
/// already matches.
pub fn resize_rgb_bilinear(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.width() == width && img.height() == height {
        return img.clone();
    }
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    RgbImage::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = sample_coord(x as usize, sx, img.width() as usize);
        let (y0, y1, fy) = sample_coord(y as usize, sy, img.height() as usize);
        let p00 = img.get_pixel(x0 as u32, y0 as u32).0;
        let p10 = img.get_pixel(x1 as u32, y0 as u32).0;
        let p01 = img.get_pixel(x0 as u32, y1 as u32).0;
        let p11 = img.get_pixel(x1 as u32, y1 as u32).0;
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
            let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
            out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}

/// Boolean raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width * height).then_some(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Pixels with luma above 127 are set.
    pub fn from_luma(img: &image::GrayImage) -> Self {
        Self::from_fn(img.width() as usize, img.height() as usize, |x, y| {
            img.get_pixel(x as u32, y as u32).0[0] > 127
        })
    }

    pub fn to_luma(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([if self.get(x as usize, y as usize) {
                255
            } else {
                0
            }])
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn and(&self, other: &Self) -> Self {
        assert!(self.same_shape(other), "mask shape mismatch");
        Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        }
    }

    /// Nearest-neighbour upscaling by an integer factor.
    pub fn upscale(&self, factor: usize) -> Self {
        Self::from_fn(self.width * factor, self.height * factor, |x, y| {
            self.get(x / factor, y / factor)
        })
    }

    /// Keeps only the largest 4-connected component. Equal-sized components
    /// resolve to the one whose first pixel comes first in raster order.
    pub fn largest_component(&self) -> Self {
        let mut labels = vec![0u32; self.bits.len()];
        let mut best: Option<(u32, usize)> = None;
        let mut next = 0u32;
        let mut queue = Vec::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            queue.clear();
            queue.push(start);
            let mut size = 0usize;
            while let Some(i) = queue.pop() {
                size += 1;
                let (x, y) = (i % self.width, i / self.width);
                let mut visit = |j: usize| {
                    if self.bits[j] && labels[j] == 0 {
                        labels[j] = next;
                        queue.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < self.width {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - self.width);
                }
                if y + 1 < self.height {
                    visit(i + self.width);
                }
            }
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((next, size));
            }
        }
        let keep = best.map_or(0, |(l, _)| l);
        Self {
            width: self.width,
            height: self.height,
            bits: labels.iter().map(|&l| keep != 0 && l == keep).collect(),
        }
    }

    /// Number of 4-connected components.
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.bits.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % self.width, i / self.width);
                let mut neighbours = [None; 4];
                if x > 0 {
                    neighbours[0] = Some(i - 1);
                }
                if x + 1 < self.width {
                    neighbours[1] = Some(i + 1);
                }
                if y > 0 {
                    neighbours[2] = Some(i - self.width);
                }
                if y + 1 < self.height {
                    neighbours[3] = Some(i + self.width);
                }
                for j in neighbours.into_iter().flatten() {
                    if self.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }
}

/// Axis-aligned box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Measurement vector `(cx, cy, w/h, h)`.
    pub fn to_xyah(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.w / self.h, self.h]
    }

    pub fn from_xyah(m: [f64; 4]) -> Self {
        let w = m[2] * m[3];
        Self::from_center(m[0], m[1], w, m[3])
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Intersection with `[0, width] x [0, height]`; `None` when empty.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<Self> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width as f64);
        let y1 = self.bottom().min(height as f64);
        (x1 > x0 && y1 > y0).then(|| Self::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

/// Integer pixel rectangle `[x, x+w) x [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.w && y < self.y + self.h
    }

    pub fn to_bbox(self) -> BBox {
        BBox::new(self.x as f64, self.y as f64, self.w as f64, self.h as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_component_keeps_bigger_blob() {
        let mut m = BinaryMask::new(10, 4);
        for x in 0..2 {
            m.set(x, 0, true);
        }
        for x in 5..9 {
            for y in 1..3 {
                m.set(x, y, true);
            }
        }
        let kept = m.largest_component();
        assert_eq!(kept.count(), 8);
        assert!(!kept.get(0, 0));
        assert_eq!(kept.component_count(), 1);
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let m = BinaryMask::from_fn(2, 2, |x, y| x == y);
        assert_eq!(m.component_count(), 2);
        assert_eq!(m.largest_component().count(), 1);
        assert!(m.largest_component().get(0, 0));
    }

    #[test]
    fn empty_mask_component_is_empty() {
        let m = BinaryMask::new(3, 3);
        assert_eq!(m.largest_component().count(), 0);
        assert_eq!(m.component_count(), 0);
    }

    #[test]
    fn bbox_iou_and_clamp() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 10.0, 10.0);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        let c = BBox::new(-5.0, -5.0, 10.0, 10.0).clamp_to(8, 8).unwrap();
        assert_eq!(c, BBox::new(0.0, 0.0, 5.0, 5.0));
        assert!(BBox::new(20.0, 20.0, 5.0, 5.0).clamp_to(8, 8).is_none());
    }

    #[test]
    fn xyah_round_trip() {
        let b = BBox::new(10.0, 20.0, 30.0, 60.0);
        let m = b.to_xyah();
        assert_eq!(m, [25.0, 50.0, 0.5, 60.0]);
        assert_eq!(BBox::from_xyah(m), b);
    }

    #[test]
    fn plane_resize_constant() {
        let p = Plane::constant(7, 5, 42.0f64);
        let r = p.resize_bilinear(13, 3);
        assert!(r.as_slice().iter().all(|&v| (v - 42.0).abs() < 1e-12));
    }
}
