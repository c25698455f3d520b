//! Constant-velocity Kalman filter over `(cx, cy, aspect, height)` box
//! measurements with height-proportional noise.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum NumericError {
    #[error("non-finite value in filter state")]
    NonFinite,
    #[error("innovation covariance is not positive definite")]
    Singular,
}

pub type Vec4<T> = [T; 4];
pub type Mat4<T> = [[T; 4]; 4];
pub type Vec8<T> = [T; 8];
pub type Mat8<T> = [[T; 8]; 8];

/// Smallest box height kept in the state after a correction.
const MIN_HEIGHT: f64 = 1e-3;

/// Mean `(cx, cy, a, h, vcx, vcy, va, vh)` and its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState<T> {
    pub mean: Vec8<T>,
    pub covariance: Mat8<T>,
}

impl<T: Scalar> KalmanState<T> {
    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.covariance.iter().flatten().all(|v| v.is_finite())
    }

    pub fn measurement(&self) -> Vec4<T> {
        [self.mean[0], self.mean[1], self.mean[2], self.mean[3]]
    }

    pub fn trace(&self) -> T {
        (0..8).fold(T::zero(), |acc, i| acc + self.covariance[i][i])
    }
}

/// Filter parameters. Noise standard deviations are fractions of the box height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanFilter<T> {
    pub std_weight_position: T,
    pub std_weight_velocity: T,
}

impl<T: Scalar> Default for KalmanFilter<T> {
    fn default() -> Self {
        Self {
            std_weight_position: T::lit(1.0 / 20.0),
            std_weight_velocity: T::lit(1.0 / 160.0),
        }
    }
}

fn symmetrize<T: Scalar, const N: usize>(m: &mut [[T; N]; N]) {
    let half = T::lit(0.5);
    for i in 0..N {
        for j in i + 1..N {
            let v = (m[i][j] + m[j][i]) * half;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
}

/// Lower-triangular Cholesky factor.
fn cholesky4<T: Scalar>(s: &Mat4<T>) -> Result<Mat4<T>, NumericError> {
    let mut l = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let mut sum = s[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > T::zero()) || !sum.is_finite() {
                    return Err(NumericError::Singular);
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b`.
fn cholesky_solve<T: Scalar>(l: &Mat4<T>, b: &Vec4<T>) -> Vec4<T> {
    let mut y = [T::zero(); 4];
    for i in 0..4 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [T::zero(); 4];
    for i in (0..4).rev() {
        let mut s = y[i];
        for k in i + 1..4 {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Squared Mahalanobis length of `offset` under covariance `cov`.
pub fn mahalanobis_sq<T: Scalar>(cov: &Mat4<T>, offset: &Vec4<T>) -> Result<T, NumericError> {
    let l = cholesky4(cov)?;
    // |L⁻¹ d|²
    let mut z = [T::zero(); 4];
    for i in 0..4 {
        let mut s = offset[i];
        for k in 0..i {
            s -= l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    Ok(z.iter().fold(T::zero(), |acc, &v| acc + v * v))
}

impl<T: Scalar> KalmanFilter<T> {
    /// New track state from an unassociated measurement.
    pub fn initiate(&self, m: Vec4<T>) -> KalmanState<T> {
        let two = T::lit(2.0);
        let ten = T::lit(10.0);
        let h = m[3];
        let (p, v) = (self.std_weight_position, self.std_weight_velocity);
        let std = [
            two * p * h,
            two * p * h,
            T::lit(1e-2),
            two * p * h,
            ten * v * h,
            ten * v * h,
            T::lit(1e-5),
            ten * v * h,
        ];
        let mut covariance = [[T::zero(); 8]; 8];
        for i in 0..8 {
            covariance[i][i] = std[i] * std[i];
        }
        KalmanState {
            mean: [
                m[0],
                m[1],
                m[2],
                m[3],
                T::zero(),
                T::zero(),
                T::zero(),
                T::zero(),
            ],
            covariance,
        }
    }

    fn process_noise(&self, h: T) -> Vec8<T> {
        let (p, v) = (self.std_weight_position * h, self.std_weight_velocity * h);
        let std = [p, p, T::lit(1e-2), p, v, v, T::lit(1e-5), v];
        std.map(|s| s * s)
    }

    fn measurement_noise(&self, h: T) -> Vec4<T> {
        let p = self.std_weight_position * h;
        [p, p, T::lit(1e-1), p].map(|s| s * s)
    }

    /// One constant-velocity step: position += velocity, covariance grows by
    /// the height-scaled process noise.
    pub fn predict(&self, state: &KalmanState<T>) -> Result<KalmanState<T>, NumericError> {
        if !state.is_finite() {
            return Err(NumericError::NonFinite);
        }
        let mut mean = state.mean;
        for i in 0..4 {
            mean[i] += mean[i + 4];
        }
        // F P Fᵀ with F = [[I, I], [0, I]]
        let p = &state.covariance;
        let mut fp = [[T::zero(); 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                fp[i][j] = if i < 4 {
                    p[i][j] + p[i + 4][j]
                } else {
                    p[i][j]
                };
            }
        }
        let mut cov = [[T::zero(); 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                cov[i][j] = if j < 4 {
                    fp[i][j] + fp[i][j + 4]
                } else {
                    fp[i][j]
                };
            }
        }
        let q = self.process_noise(state.mean[3]);
        for i in 0..8 {
            cov[i][i] += q[i];
        }
        symmetrize(&mut cov);
        let out = KalmanState {
            mean,
            covariance: cov,
        };
        if !out.is_finite() {
            return Err(NumericError::NonFinite);
        }
        Ok(out)
    }

    /// Predicted measurement mean and innovation covariance `H P Hᵀ + R`.
    pub fn project(&self, state: &KalmanState<T>) -> (Vec4<T>, Mat4<T>) {
        let r = self.measurement_noise(state.mean[3]);
        let mut s = [[T::zero(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                s[i][j] = state.covariance[i][j];
            }
            s[i][i] += r[i];
        }
        (state.measurement(), s)
    }

    /// Kalman correction with measurement `(cx, cy, a, h)`.
    pub fn update(
        &self,
        state: &KalmanState<T>,
        measurement: Vec4<T>,
    ) -> Result<KalmanState<T>, NumericError> {
        if !state.is_finite() || measurement.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite);
        }
        let (projected, s) = self.project(state);
        let l = cholesky4(&s)?;
        let p = &state.covariance;
        // Kᵀ = S⁻¹ H P, column by column of H P (4x8)
        let mut gain = [[T::zero(); 4]; 8];
        for col in 0..8 {
            let hp = [p[0][col], p[1][col], p[2][col], p[3][col]];
            gain[col] = cholesky_solve(&l, &hp);
        }
        let innovation = [
            measurement[0] - projected[0],
            measurement[1] - projected[1],
            measurement[2] - projected[2],
            measurement[3] - projected[3],
        ];
        let mut mean = state.mean;
        for i in 0..8 {
            for k in 0..4 {
                mean[i] += gain[i][k] * innovation[k];
            }
        }
        mean[3] = mean[3].max(T::lit(MIN_HEIGHT));
        // P - K S Kᵀ = P - K (H P)
        let mut cov = *p;
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = T::zero();
                for k in 0..4 {
                    acc += gain[i][k] * p[k][j];
                }
                cov[i][j] -= acc;
            }
        }
        symmetrize(&mut cov);
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = row[i].max(T::zero());
        }
        let out = KalmanState {
            mean,
            covariance: cov,
        };
        if !out.is_finite() {
            return Err(NumericError::NonFinite);
        }
        Ok(out)
    }

    /// Squared Mahalanobis distance of a measurement under the projected
    /// measurement distribution.
    pub fn gating_distance(
        &self,
        state: &KalmanState<T>,
        measurement: Vec4<T>,
    ) -> Result<T, NumericError> {
        let (projected, s) = self.project(state);
        let d = [
            measurement[0] - projected[0],
            measurement[1] - projected[1],
            measurement[2] - projected[2],
            measurement[3] - projected[3],
        ];
        mahalanobis_sq(&s, &d)
    }
}
