//! Constant-velocity Kalman filter in image space.
//!
//! State is `(cx, cy, a, h, vcx, vcy, va, vh)`: box centre, aspect ratio
//! `w / h`, height and their per-frame velocities. Process and observation
//! noise scale with the current height so the filter behaves the same at every
//! object size.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::geometry::BBox;

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("box must have positive width and height, got {w}x{h}")]
    DegenerateBox { w: f64, h: f64 },
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
}

/// `(cx, cy, a, h)` observation derived from a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement(pub SVector<f64, 4>);

impl Measurement {
    pub fn new(cx: f64, cy: f64, aspect: f64, height: f64) -> Self {
        Measurement(SVector::<f64, 4>::new(cx, cy, aspect, height))
    }
}

pub fn to_measurement(b: &BBox) -> Result<Measurement, KalmanError> {
    if !(b.w > 0.0 && b.h > 0.0) || !b.is_valid() {
        return Err(KalmanError::DegenerateBox { w: b.w, h: b.h });
    }
    Ok(Measurement::new(
        b.x + b.w / 2.0,
        b.y + b.h / 2.0,
        b.w / b.h,
        b.h,
    ))
}

/// Box of the first four state components.
pub fn from_state(s: &KalmanState) -> BBox {
    let (cx, cy, a, h) = (s.mean[0], s.mean[1], s.mean[2], s.mean[3]);
    let w = a * h;
    BBox {
        x: cx - w / 2.0,
        y: cy - h / 2.0,
        w,
        h,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

/// Linear-Gaussian building blocks shared by the image-space filter and by
/// low-dimensional checks of the same algebra.
pub mod linear {
    use super::KalmanError;
    use nalgebra::{SMatrix, SVector};

    /// Measurement-space projection `(H x, H P Hᵀ + R)`.
    pub fn project<const N: usize, const M: usize>(
        mean: &SVector<f64, N>,
        cov: &SMatrix<f64, N, N>,
        obs: &SMatrix<f64, M, N>,
        obs_noise: &SMatrix<f64, M, M>,
    ) -> (SVector<f64, M>, SMatrix<f64, M, M>) {
        (obs * mean, obs * cov * obs.transpose() + obs_noise)
    }

    /// Kalman correction. Returns the posterior mean and covariance.
    pub fn correct<const N: usize, const M: usize>(
        mean: &SVector<f64, N>,
        cov: &SMatrix<f64, N, N>,
        obs: &SMatrix<f64, M, N>,
        obs_noise: &SMatrix<f64, M, M>,
        z: &SVector<f64, M>,
    ) -> Result<(SVector<f64, N>, SMatrix<f64, N, N>), KalmanError> {
        let (pred, s) = project(mean, cov, obs, obs_noise);
        let chol = s.cholesky().ok_or(KalmanError::SingularInnovation)?;
        // K = P Hᵀ S⁻¹, solved as S Kᵀ = H P
        let gain = chol.solve(&(obs * cov)).transpose();
        let new_mean = mean + gain * (z - pred);
        let new_cov = cov - gain * s * gain.transpose();
        Ok((new_mean, symmetrize(&new_cov)))
    }

    /// `yᵀ S⁻¹ y` via Cholesky.
    pub fn squared_mahalanobis<const M: usize>(
        innovation: &SVector<f64, M>,
        s: &SMatrix<f64, M, M>,
    ) -> Result<f64, KalmanError> {
        let chol = s.cholesky().ok_or(KalmanError::SingularInnovation)?;
        let l = chol.l();
        let y = l
            .solve_lower_triangular(innovation)
            .ok_or(KalmanError::SingularInnovation)?;
        Ok(y.norm_squared())
    }

    pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
        (m + m.transpose()) * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanFilter {
    /// Position noise per unit of height (default 1/20).
    pub std_weight_position: f64,
    /// Velocity noise per unit of height (default 1/160).
    pub std_weight_velocity: f64,
}

impl Default for KalmanFilter {
    fn default() -> Self {
        KalmanFilter {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
        }
    }
}

fn diag_sq<const N: usize>(std: [f64; N]) -> SMatrix<f64, N, N> {
    SMatrix::from_diagonal(&SVector::from(std.map(|s| s * s)))
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> SMatrix<f64, 4, 8> {
    SMatrix::<f64, 4, 8>::identity()
}

impl KalmanFilter {
    pub fn initiate(&self, m: &Measurement) -> KalmanState {
        let h = m.0[3];
        let p = 2.0 * self.std_weight_position * h;
        let v = 10.0 * self.std_weight_velocity * h;
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&m.0);
        KalmanState {
            mean,
            covariance: diag_sq([p, p, 1e-2, p, v, v, 1e-5, v]),
        }
    }

    fn process_noise(&self, h: f64) -> StateCovariance {
        let p = self.std_weight_position * h;
        let v = self.std_weight_velocity * h;
        diag_sq([p, p, 1e-2, p, v, v, 1e-5, v])
    }

    fn observation_noise(&self, h: f64) -> SMatrix<f64, 4, 4> {
        let p = self.std_weight_position * h;
        diag_sq([p, p, 1e-1, p])
    }

    pub fn predict(&self, s: &KalmanState) -> KalmanState {
        let f = transition();
        let q = self.process_noise(s.mean[3]);
        KalmanState {
            mean: f * s.mean,
            covariance: linear::symmetrize(&(f * s.covariance * f.transpose() + q)),
        }
    }

    /// Predicted measurement distribution `(mean, S)`.
    pub fn project(&self, s: &KalmanState) -> (SVector<f64, 4>, SMatrix<f64, 4, 4>) {
        linear::project(
            &s.mean,
            &s.covariance,
            &observation(),
            &self.observation_noise(s.mean[3]),
        )
    }

    pub fn update(&self, s: &KalmanState, m: &Measurement) -> Result<KalmanState, KalmanError> {
        let (mean, covariance) = linear::correct(
            &s.mean,
            &s.covariance,
            &observation(),
            &self.observation_noise(s.mean[3]),
            &m.0,
        )?;
        Ok(KalmanState { mean, covariance })
    }

    /// Squared Mahalanobis distance of `m` from the projected state.
    pub fn gating_distance(&self, s: &KalmanState, m: &Measurement) -> Result<f64, KalmanError> {
        let (pred, cov) = self.project(s);
        linear::squared_mahalanobis(&(m.0 - pred), &cov)
    }

    /// [`Self::gating_distance`] for many measurements, factorising once.
    pub fn gating_distances(&self, s: &KalmanState, ms: &[Measurement]) -> Result<Vec<f64>, KalmanError> {
        let (pred, cov) = self.project(s);
        let chol = cov.cholesky().ok_or(KalmanError::SingularInnovation)?;
        let l = chol.l();
        ms.iter()
            .map(|m| {
                l.solve_lower_triangular(&(m.0 - pred))
                    .map(|y| y.norm_squared())
                    .ok_or(KalmanError::SingularInnovation)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix1, Vector1};

    #[test]
    fn measurement_conversion() {
        let m = to_measurement(&BBox::new(0., 0., 2., 4.).unwrap()).unwrap();
        assert_eq!(m, Measurement::new(1., 2., 0.5, 4.));
        let sq = to_measurement(&BBox::new(0., 0., 3., 3.).unwrap()).unwrap();
        assert_eq!(sq.0[2], 1.0);
        assert!(to_measurement(&BBox::new(0., 0., 0., 3.).unwrap()).is_err());
        let b = BBox::new(3.5, -2.0, 7.0, 11.0).unwrap();
        let kf = KalmanFilter::default();
        let back = from_state(&kf.initiate(&to_measurement(&b).unwrap()));
        assert!((back.x - b.x).abs() < 1e-12 && (back.y - b.y).abs() < 1e-12);
        assert!((back.w - b.w).abs() < 1e-12 && (back.h - b.h).abs() < 1e-12);
    }

    #[test]
    fn initiate_layout() {
        let kf = KalmanFilter::default();
        let m = Measurement::new(10., 20., 0.5, 40.);
        let s = kf.initiate(&m);
        assert_eq!(s.mean.as_slice(), &[10., 20., 0.5, 40., 0., 0., 0., 0.]);
        assert!(s.covariance.diagonal().iter().all(|&v| v > 0.0));
        assert_eq!(s, kf.initiate(&m));
    }

    #[test]
    fn predict_moves_by_velocity() {
        let kf = KalmanFilter::default();
        let mut s = kf.initiate(&Measurement::new(0., 0., 1., 10.));
        let still = kf.predict(&s);
        assert_eq!(still.mean.fixed_rows::<4>(0), s.mean.fixed_rows::<4>(0));
        assert!(still.covariance.trace() > s.covariance.trace());
        s.mean[4] = 2.0;
        let moved = kf.predict(&s);
        assert_eq!(moved.mean[0], 2.0);
    }

    #[test]
    fn update_with_predicted_measurement_keeps_mean() {
        let kf = KalmanFilter::default();
        let s = kf.predict(&kf.initiate(&Measurement::new(5., 6., 0.7, 30.)));
        let (pred, _) = kf.project(&s);
        let u = kf.update(&s, &Measurement(pred)).unwrap();
        assert!((u.mean - s.mean).amax() < 1e-12);
        let pos = |c: &StateCovariance| c[(0, 0)] + c[(1, 1)] + c[(2, 2)] + c[(3, 3)];
        assert!(pos(&u.covariance) <= pos(&s.covariance));
        assert_eq!(kf.gating_distance(&s, &Measurement(pred)).unwrap(), 0.0);
    }

    #[test]
    fn scalar_correction_is_halfway() {
        let (mean, var) = linear::correct(
            &Vector1::new(0.0),
            &Matrix1::new(1.0),
            &Matrix1::new(1.0),
            &Matrix1::new(1.0),
            &Vector1::new(2.0),
        )
        .unwrap();
        assert!((mean[0] - 1.0).abs() <= 1e-12);
        assert!((var[(0, 0)] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn scalar_mahalanobis() {
        let d = linear::squared_mahalanobis(&Vector1::new(2.0), &Matrix1::new(4.0)).unwrap();
        assert!((d - 1.0).abs() <= 1e-12);
        assert_eq!(
            linear::squared_mahalanobis(&Vector1::new(1.0), &Matrix1::new(0.0)),
            Err(KalmanError::SingularInnovation)
        );
    }

    #[test]
    fn gating_symmetric_offsets() {
        let kf = KalmanFilter::default();
        let s = kf.predict(&kf.initiate(&Measurement::new(50., 50., 0.5, 40.)));
        let (pred, _) = kf.project(&s);
        let off = SVector::<f64, 4>::new(3.0, -1.0, 0.01, 2.0);
        let a = kf.gating_distance(&s, &Measurement(pred + off)).unwrap();
        let b = kf.gating_distance(&s, &Measurement(pred - off)).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
        assert!(a > 0.0);
        let batch = kf.gating_distances(&s, &[Measurement(pred + off), Measurement(pred - off)]).unwrap();
        assert_eq!(batch, vec![a, b]);
    }
}
