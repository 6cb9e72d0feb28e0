//! Error-state EKF over robot states plus robocentric bearing/inverse-depth landmarks.
//!
//! Error-state layout: `δr(0..3) δθ(3..6) δv(6..9) δb_f(9..12) δb_ω(12..15)` followed by
//! `(δα, δβ, δρ)` for every active landmark in slot order. Attitude error is body-frame:
//! `R_true = R Exp(δθ)`. Position and velocity live in the world frame.

mod propagate;
mod update;

pub use propagate::PropagationJacobians;
pub use update::{InsertionReport, PixelPrediction, UpdateOutcome};

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::error::{Result, VioError};
use crate::geometry::{bearing_vector, exp_so3, log_so3, wrap_angle};
use crate::imaging::Spectrum;
use crate::tracker::PatchPyramid;

pub const ROBOT_DIM: usize = 15;
pub const LANDMARK_DIM: usize = 3;
pub const NOISE_DIM: usize = 12;
/// 0.99 quantile of the chi-square distribution with two degrees of freedom.
pub const CHI2_2DOF_99: f64 = 9.210_340_371_976_184;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Specific force in the body frame, m/s².
    pub f_hat: Vector3<f64>,
    /// Angular rate in the body frame, rad/s.
    pub omega_hat: Vector3<f64>,
}

impl ImuSample {
    pub fn new(timestamp: f64, f_hat: Vector3<f64>, omega_hat: Vector3<f64>) -> Self {
        ImuSample {
            timestamp,
            f_hat,
            omega_hat,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite()
            && self.f_hat.iter().all(|v| v.is_finite())
            && self.omega_hat.iter().all(|v| v.is_finite())
    }
}

/// Continuous-time noise densities (white noise) and bias random-walk intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuNoiseConfig {
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s³/√Hz
    pub accel_bias_walk: f64,
    /// rad/s²/√Hz
    pub gyro_bias_walk: f64,
}

impl Default for ImuNoiseConfig {
    fn default() -> Self {
        ImuNoiseConfig {
            accel_noise_density: 4.0e-3,
            gyro_noise_density: 3.0e-4,
            accel_bias_walk: 1.0e-4,
            gyro_bias_walk: 1.0e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Landmark slots (J).
    pub max_landmarks: usize,
    /// Pixel measurement standard deviation.
    pub sigma_px: f64,
    pub rho_init: f64,
    pub sigma_rho: f64,
    /// Consecutive misses (M) after which a landmark is dropped.
    pub miss_limit: u32,
    pub chi2_gate: f64,
    pub min_rho: f64,
    /// Landmark process noise, rad²/s on each bearing angle.
    pub bearing_process_noise: f64,
    /// Landmark process noise on inverse depth, 1/m²/s.
    pub rho_process_noise: f64,
    pub init_sigma_position: f64,
    pub init_sigma_tilt: f64,
    pub init_sigma_yaw: f64,
    pub init_sigma_velocity: f64,
    pub init_sigma_accel_bias: f64,
    pub init_sigma_gyro_bias: f64,
    pub imu: ImuNoiseConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_landmarks: 25,
            sigma_px: 1.0,
            rho_init: 0.5,
            sigma_rho: 1.0,
            miss_limit: 3,
            chi2_gate: CHI2_2DOF_99,
            min_rho: 1e-3,
            bearing_process_noise: 1e-5,
            rho_process_noise: 1e-4,
            init_sigma_position: 1e-3,
            init_sigma_tilt: 0.01,
            init_sigma_yaw: 1e-3,
            init_sigma_velocity: 0.02,
            init_sigma_accel_bias: 0.05,
            init_sigma_gyro_bias: 0.005,
            imu: ImuNoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub r: Vector3<f64>,
    /// Body to world.
    pub q: UnitQuaternion<f64>,
    pub v: Vector3<f64>,
    pub b_f: Vector3<f64>,
    pub b_omega: Vector3<f64>,
}

impl RobotState {
    pub fn at_rest(q: UnitQuaternion<f64>) -> Self {
        RobotState {
            r: Vector3::zeros(),
            q,
            v: Vector3::zeros(),
            b_f: Vector3::zeros(),
            b_omega: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackedLandmark {
    pub id: u64,
    /// Azimuth in the owning camera frame.
    pub alpha: f64,
    /// Elevation in the owning camera frame.
    pub beta: f64,
    /// Inverse distance from the owning camera center.
    pub rho: f64,
    pub spectrum: Spectrum,
    pub patch: PatchPyramid,
    pub frames_tracked: u32,
    pub consecutive_misses: u32,
    pub out_of_view: bool,
    pub last_pixel: Vector2<f64>,
}

impl TrackedLandmark {
    pub fn bearing(&self) -> Vector3<f64> {
        bearing_vector(self.alpha, self.beta)
    }

    pub fn distance(&self) -> f64 {
        1.0 / self.rho
    }
}

/// Symmetry, definiteness and quaternion-norm diagnostics of a filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceHygiene {
    /// `max|Σ - Σᵀ| / max|Σ|`
    pub asymmetry: f64,
    /// Smallest over largest eigenvalue.
    pub min_eig_ratio: f64,
    pub quat_norm_error: f64,
}

impl CovarianceHygiene {
    pub fn holds(&self) -> bool {
        self.asymmetry <= 1e-9 && self.min_eig_ratio >= -1e-8 && self.quat_norm_error <= 1e-9
    }
}

#[derive(Debug, Clone)]
pub struct FilterState {
    pub robot: RobotState,
    pub rig: CameraRig,
    pub config: FilterConfig,
    /// Landmarks ever inserted.
    pub insertion_counter: u64,
    slots: Vec<Option<TrackedLandmark>>,
    covariance: DMatrix<f64>,
}

impl FilterState {
    /// Filter without landmarks and a diagonal initial robot covariance from `config`.
    pub fn new(robot: RobotState, rig: CameraRig, config: FilterConfig) -> Self {
        let mut diag = DVector::zeros(ROBOT_DIM);
        let c = &config;
        let sig = [
            c.init_sigma_position,
            c.init_sigma_position,
            c.init_sigma_position,
            c.init_sigma_tilt,
            c.init_sigma_tilt,
            c.init_sigma_yaw,
            c.init_sigma_velocity,
            c.init_sigma_velocity,
            c.init_sigma_velocity,
            c.init_sigma_accel_bias,
            c.init_sigma_accel_bias,
            c.init_sigma_accel_bias,
            c.init_sigma_gyro_bias,
            c.init_sigma_gyro_bias,
            c.init_sigma_gyro_bias,
        ];
        for (i, s) in sig.iter().enumerate() {
            diag[i] = s * s;
        }
        FilterState {
            robot,
            rig,
            config,
            insertion_counter: 0,
            slots: vec![None; config.max_landmarks],
            covariance: DMatrix::from_diagonal(&diag),
        }
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Replaces the covariance; it must match the current error dimension.
    pub fn set_covariance(&mut self, cov: DMatrix<f64>) -> Result<()> {
        let n = self.error_dim();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(VioError::invalid(format!(
                "covariance must be {n}x{n}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        self.covariance = cov;
        Ok(())
    }

    pub fn error_dim(&self) -> usize {
        ROBOT_DIM + LANDMARK_DIM * self.active_count()
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn landmark(&self, slot: usize) -> Option<&TrackedLandmark> {
        self.slots.get(slot).and_then(|s| s.as_ref())
    }

    pub fn landmark_mut(&mut self, slot: usize) -> Option<&mut TrackedLandmark> {
        self.slots.get_mut(slot).and_then(|s| s.as_mut())
    }

    pub fn active_slots(&self) -> Vec<usize> {
        (0..self.slots.len())
            .filter(|&i| self.slots[i].is_some())
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Row of the landmark's first error component in the covariance.
    pub fn block_offset(&self, slot: usize) -> Option<usize> {
        self.slots.get(slot)?.as_ref()?;
        let before = self.slots[..slot].iter().filter(|s| s.is_some()).count();
        Some(ROBOT_DIM + LANDMARK_DIM * before)
    }

    /// Position and attitude error block.
    pub fn pose_covariance(&self) -> nalgebra::Matrix6<f64> {
        self.covariance.fixed_view::<6, 6>(0, 0).into_owned()
    }

    /// Applies an error-state increment to the nominal state.
    pub fn boxplus(&mut self, dx: &DVector<f64>) -> Result<()> {
        if dx.len() != self.error_dim() {
            return Err(VioError::invalid("error increment has wrong dimension"));
        }
        let v3 = |i: usize| Vector3::new(dx[i], dx[i + 1], dx[i + 2]);
        let rb = &mut self.robot;
        rb.r += v3(0);
        rb.q = rb.q * exp_so3(&v3(3));
        rb.q.renormalize();
        rb.v += v3(6);
        rb.b_f += v3(9);
        rb.b_omega += v3(12);
        let min_rho = self.config.min_rho;
        let mut off = ROBOT_DIM;
        for lm in self.slots.iter_mut().flatten() {
            lm.alpha = wrap_angle(lm.alpha + dx[off]);
            lm.beta = (lm.beta + dx[off + 1]).clamp(-1.55, 1.55);
            lm.rho = (lm.rho + dx[off + 2]).max(min_rho);
            off += LANDMARK_DIM;
        }
        Ok(())
    }

    /// Error-state difference `self ⊟ base`, assuming matching landmark slots.
    pub fn boxminus(&self, base: &FilterState) -> DVector<f64> {
        let n = self.error_dim();
        let mut dx = DVector::zeros(n);
        let (a, b) = (&self.robot, &base.robot);
        dx.fixed_rows_mut::<3>(0).copy_from(&(a.r - b.r));
        dx.fixed_rows_mut::<3>(3)
            .copy_from(&log_so3(&(b.q.inverse() * a.q)));
        dx.fixed_rows_mut::<3>(6).copy_from(&(a.v - b.v));
        dx.fixed_rows_mut::<3>(9).copy_from(&(a.b_f - b.b_f));
        dx.fixed_rows_mut::<3>(12)
            .copy_from(&(a.b_omega - b.b_omega));
        let mut off = ROBOT_DIM;
        for (la, lb) in self.slots.iter().zip(&base.slots) {
            if let (Some(la), Some(lb)) = (la, lb) {
                dx[off] = wrap_angle(la.alpha - lb.alpha);
                dx[off + 1] = la.beta - lb.beta;
                dx[off + 2] = la.rho - lb.rho;
                off += LANDMARK_DIM;
            }
        }
        dx
    }

    pub fn hygiene(&self) -> CovarianceHygiene {
        let p = &self.covariance;
        let scale = p.amax().max(f64::MIN_POSITIVE);
        let asym = (p - p.transpose()).amax() / scale;
        let eig = nalgebra::SymmetricEigen::new(p.clone()).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        CovarianceHygiene {
            asymmetry: asym,
            min_eig_ratio: if max > 0.0 { min / max } else { min },
            quat_norm_error: (self.robot.q.as_ref().norm() - 1.0).abs(),
        }
    }

    pub(crate) fn symmetrize(&mut self) {
        let n = self.covariance.nrows();
        for i in 0..n {
            for j in 0..i {
                let m = 0.5 * (self.covariance[(i, j)] + self.covariance[(j, i)]);
                self.covariance[(i, j)] = m;
                self.covariance[(j, i)] = m;
            }
        }
    }

    pub(crate) fn slots(&self) -> &[Option<TrackedLandmark>] {
        &self.slots
    }

    pub(crate) fn slots_mut(&mut self) -> &mut [Option<TrackedLandmark>] {
        &mut self.slots
    }

    pub(crate) fn covariance_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.covariance
    }

    /// Puts `lm` into the first free slot with the given 3x3 landmark covariance and zero
    /// cross-covariance. Returns the slot, or `None` when all slots are taken.
    pub(crate) fn insert_landmark(
        &mut self,
        lm: TrackedLandmark,
        cov: &nalgebra::Matrix3<f64>,
    ) -> Option<usize> {
        let slot = self.slots.iter().position(|s| s.is_none())?;
        let before = self.slots[..slot].iter().filter(|s| s.is_some()).count();
        let off = ROBOT_DIM + LANDMARK_DIM * before;
        let p = std::mem::replace(&mut self.covariance, DMatrix::zeros(0, 0));
        let mut p = p
            .insert_rows(off, LANDMARK_DIM, 0.0)
            .insert_columns(off, LANDMARK_DIM, 0.0);
        p.fixed_view_mut::<3, 3>(off, off).copy_from(cov);
        self.covariance = p;
        self.slots[slot] = Some(lm);
        self.insertion_counter += 1;
        Some(slot)
    }

    pub(crate) fn remove_landmark(&mut self, slot: usize) -> Option<TrackedLandmark> {
        let off = self.block_offset(slot)?;
        let p = std::mem::replace(&mut self.covariance, DMatrix::zeros(0, 0));
        self.covariance = p
            .remove_rows(off, LANDMARK_DIM)
            .remove_columns(off, LANDMARK_DIM);
        self.slots[slot].take()
    }
}
