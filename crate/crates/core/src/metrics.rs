//! Image-quality and mask-agreement kernels: Laplacian variance, SSIM,
//! mask IoU and Dice.
//!
//! All functions are pure and generic over the [`Scalar`] type.

use thiserror::Error;

use crate::raster::{BinaryMask, Plane};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("image {width}x{height} is smaller than the {min}x{min} kernel")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Side length of the SSIM Gaussian window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_DYNAMIC_RANGE: f64 = 255.0;

/// Population variance of the 4-neighbour Laplacian response over interior
/// pixels (no padding).
pub fn laplacian_variance<T: Scalar>(img: &Plane<T>) -> Result<T, MetricError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(MetricError::TooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let four = T::lit(4.0);
    let mut responses = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let r = img.get(x, y - 1) + img.get(x - 1, y) + img.get(x + 1, y) + img.get(x, y + 1)
                - four * img.get(x, y);
            responses.push(r);
        }
    }
    let n = T::from_usize_lossy(responses.len());
    let mean = responses.iter().fold(T::zero(), |acc, &r| acc + r) / n;
    let var = responses
        .iter()
        .fold(T::zero(), |acc, &r| acc + (r - mean) * (r - mean))
        / n;
    Ok(var)
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_kernel<T: Scalar>(size: usize, sigma: f64) -> Vec<T> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::lit(v / sum)).collect()
}

/// Separable "valid" filtering: output shrinks by `taps.len() - 1` per axis.
fn filter_valid<T: Scalar>(src: &[T], w: usize, h: usize, taps: &[T]) -> (Vec<T>, usize, usize) {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut tmp = vec![T::zero(); ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = T::zero();
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * row[x + t];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = T::zero();
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * tmp[(y + t) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03 and dynamic range 255.
pub fn ssim<T: Scalar>(a: &Plane<T>, b: &Plane<T>) -> Result<T, MetricError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            width: w,
            height: h,
            min: SSIM_WINDOW,
        });
    }
    let taps = gaussian_kernel::<T>(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = T::lit((SSIM_K1 * SSIM_DYNAMIC_RANGE).powi(2));
    let c2 = T::lit((SSIM_K2 * SSIM_DYNAMIC_RANGE).powi(2));
    let two = T::lit(2.0);

    let xa = a.as_slice();
    let xb = b.as_slice();
    let aa: Vec<T> = xa.iter().map(|&v| v * v).collect();
    let bb: Vec<T> = xb.iter().map(|&v| v * v).collect();
    let ab: Vec<T> = xa.iter().zip(xb).map(|(&u, &v)| u * v).collect();

    let (mu_a, ow, oh) = filter_valid(xa, w, h, &taps);
    let (mu_b, ..) = filter_valid(xb, w, h, &taps);
    let (e_aa, ..) = filter_valid(&aa, w, h, &taps);
    let (e_bb, ..) = filter_valid(&bb, w, h, &taps);
    let (e_ab, ..) = filter_valid(&ab, w, h, &taps);

    let mut total = T::zero();
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (two * ma * mb + c1) * (two * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok(total / T::from_usize_lossy(ow * oh))
}

fn check_shapes(a: &BinaryMask, b: &BinaryMask) -> Result<(), MetricError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(MetricError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ))
    }
}

fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize) {
    a.bits()
        .iter()
        .zip(b.bits())
        .fold((0, 0, 0), |(i, na, nb), (&x, &y)| {
            (i + (x && y) as usize, na + x as usize, nb + y as usize)
        })
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks agree perfectly (1.0).
pub fn mask_iou<T: Scalar>(a: &BinaryMask, b: &BinaryMask) -> Result<T, MetricError> {
    check_shapes(a, b)?;
    let (inter, na, nb) = overlap_counts(a, b);
    let union = na + nb - inter;
    if union == 0 {
        return Ok(T::one());
    }
    Ok(T::from_usize_lossy(inter) / T::from_usize_lossy(union))
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks agree perfectly (1.0).
pub fn dice<T: Scalar>(a: &BinaryMask, b: &BinaryMask) -> Result<T, MetricError> {
    check_shapes(a, b)?;
    let (inter, na, nb) = overlap_counts(a, b);
    if na + nb == 0 {
        return Ok(T::one());
    }
    Ok(T::from_usize_lossy(2 * inter) / T::from_usize_lossy(na + nb))
}

pub fn dice_loss<T: Scalar>(a: &BinaryMask, b: &BinaryMask) -> Result<T, MetricError> {
    dice::<T>(a, b).map(|d| T::one() - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize) -> Plane<f64> {
        Plane::from_fn(n, n, |x, y| if (x + y) % 2 == 0 { 255.0 } else { 0.0 })
    }

    /// Naive direct evaluation of the kernel, independent of the production loop.
    fn laplacian_variance_oracle(img: &Plane<f64>) -> f64 {
        let kernel = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
        let mut vals = vec![];
        for y in 1..img.height() - 1 {
            for x in 1..img.width() - 1 {
                let mut s = 0.0;
                for (ky, row) in kernel.iter().enumerate() {
                    for (kx, k) in row.iter().enumerate() {
                        s += k * img.get(x + kx - 1, y + ky - 1);
                    }
                }
                vals.push(s);
            }
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn laplacian_constant_and_ramp_are_zero() {
        assert_eq!(
            laplacian_variance(&Plane::constant(9, 7, 80.0f64)).unwrap(),
            0.0
        );
        let ramp = Plane::from_fn(20, 10, |x, _| x as f64);
        assert_eq!(laplacian_variance(&ramp).unwrap(), 0.0);
        let ramp32 = Plane::from_fn(20, 10, |x, y| (x + 2 * y) as f32);
        assert_eq!(laplacian_variance(&ramp32).unwrap(), 0.0);
    }

    #[test]
    fn laplacian_checkerboard() {
        let board = checkerboard(8);
        assert_eq!(laplacian_variance_oracle(&board), 1_040_400.0);
        assert_eq!(laplacian_variance(&board).unwrap(), 1_040_400.0);
    }

    #[test]
    fn laplacian_rejects_small() {
        let p = Plane::constant(2, 5, 1.0f64);
        assert!(matches!(
            laplacian_variance(&p),
            Err(MetricError::TooSmall { .. })
        ));
    }

    #[test]
    fn ssim_self_identity_and_constants() {
        let tex = Plane::from_fn(24, 20, |x, y| ((x * 37 + y * 91) % 256) as f64);
        assert!((ssim(&tex, &tex).unwrap() - 1.0).abs() < 1e-9);
        let a = Plane::constant(16, 16, 100.0f64);
        let b = Plane::constant(16, 16, 200.0f64);
        let c1 = 6.5025;
        let expected = (2.0 * 100.0 * 200.0 + c1) / (100.0f64.powi(2) + 200.0f64.powi(2) + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-6);
        assert!((expected - 0.80003).abs() < 1e-5);
    }

    #[test]
    fn ssim_errors() {
        let a = Plane::constant(16, 16, 1.0f64);
        let b = Plane::constant(16, 15, 1.0f64);
        assert!(matches!(
            ssim(&a, &b),
            Err(MetricError::DimensionMismatch(..))
        ));
        let c = Plane::constant(10, 16, 1.0f64);
        assert!(matches!(ssim(&c, &c), Err(MetricError::TooSmall { .. })));
    }

    #[test]
    fn gaussian_taps_normalised() {
        let k = gaussian_kernel::<f64>(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[10]);
    }

    #[test]
    fn iou_and_dice_examples() {
        let left = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let full = BinaryMask::from_fn(4, 4, |_, _| true);
        assert_eq!(mask_iou::<f64>(&left, &full).unwrap(), 0.5);
        assert_eq!(mask_iou::<f64>(&full, &full).unwrap(), 1.0);
        let right = BinaryMask::from_fn(4, 4, |x, _| x >= 2);
        assert_eq!(mask_iou::<f64>(&left, &right).unwrap(), 0.0);
        assert_eq!(dice::<f64>(&left, &right).unwrap(), 0.0);
        assert_eq!(dice_loss::<f64>(&left, &right).unwrap(), 1.0);
        assert_eq!(dice::<f64>(&left, &left).unwrap(), 1.0);
        assert_eq!(dice_loss::<f64>(&left, &left).unwrap(), 0.0);
        let empty = BinaryMask::new(4, 4);
        assert_eq!(mask_iou::<f64>(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dice::<f32>(&empty, &empty).unwrap(), 1.0);
        assert!(mask_iou::<f64>(&empty, &BinaryMask::new(3, 4)).is_err());
    }
}
