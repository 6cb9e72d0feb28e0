use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};

use super::{FilterState, ImuSample, LANDMARK_DIM, NOISE_DIM, ROBOT_DIM};
use crate::error::{Result, VioError};
use crate::geometry::{exp_so3, gravity, landmark_params, landmark_point, right_jacobian, skew};

type Mat15 = SMatrix<f64, 15, 15>;
type Mat3x15 = SMatrix<f64, 3, 15>;

/// Block-structured transition `F` and noise input `G` of one propagation step.
///
/// Landmark rows only couple to the robot block and to themselves, so `F` is stored as the
/// robot block plus one `(3x15, 3x3)` pair per active landmark.
#[derive(Debug, Clone)]
pub struct PropagationJacobians {
    pub robot: Mat15,
    pub landmark_robot: Vec<Mat3x15>,
    pub landmark_self: Vec<Matrix3<f64>>,
    pub noise_robot: SMatrix<f64, 15, NOISE_DIM>,
    pub noise_landmark: Vec<SMatrix<f64, 3, NOISE_DIM>>,
}

impl PropagationJacobians {
    pub fn dim(&self) -> usize {
        ROBOT_DIM + LANDMARK_DIM * self.landmark_self.len()
    }

    /// `F * m` exploiting the block structure.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        let top = m.fixed_rows::<ROBOT_DIM>(0);
        out.fixed_rows_mut::<ROBOT_DIM>(0)
            .copy_from(&(self.robot * top));
        for (k, (lr, ll)) in self
            .landmark_robot
            .iter()
            .zip(&self.landmark_self)
            .enumerate()
        {
            let o = ROBOT_DIM + LANDMARK_DIM * k;
            let rows = lr * top + ll * m.fixed_rows::<LANDMARK_DIM>(o);
            out.fixed_rows_mut::<LANDMARK_DIM>(o).copy_from(&rows);
        }
        out
    }

    /// Dense `(F, G)`.
    pub fn dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut f = DMatrix::zeros(n, n);
        let mut g = DMatrix::zeros(n, NOISE_DIM);
        f.fixed_view_mut::<15, 15>(0, 0).copy_from(&self.robot);
        g.fixed_view_mut::<15, NOISE_DIM>(0, 0)
            .copy_from(&self.noise_robot);
        for k in 0..self.landmark_self.len() {
            let o = ROBOT_DIM + LANDMARK_DIM * k;
            f.fixed_view_mut::<3, 15>(o, 0)
                .copy_from(&self.landmark_robot[k]);
            f.fixed_view_mut::<3, 3>(o, o)
                .copy_from(&self.landmark_self[k]);
            g.fixed_view_mut::<3, NOISE_DIM>(o, 0)
                .copy_from(&self.noise_landmark[k]);
        }
        (f, g)
    }
}

/// Quantities shared by the nominal step and its Jacobians.
struct StepTerms {
    dt: f64,
    rot: Matrix3<f64>,
    delta: UnitQuaternion<f64>,
    delta_t: Matrix3<f64>,
    half: Matrix3<f64>,
    rot_mid: Matrix3<f64>,
    f_bar: Vector3<f64>,
    accel: Vector3<f64>,
    jr: Matrix3<f64>,
    jr_half: Matrix3<f64>,
}

impl StepTerms {
    fn new(state: &FilterState, imu: &ImuSample, dt: f64, noise: &SVector<f64, NOISE_DIM>) -> Self {
        let rb = &state.robot;
        let w_bar = imu.omega_hat - rb.b_omega - noise.fixed_rows::<3>(3);
        let f_bar = imu.f_hat - rb.b_f - noise.fixed_rows::<3>(0);
        let phi = w_bar * dt;
        let delta = exp_so3(&phi);
        let half_q = exp_so3(&(phi * 0.5));
        let rot = rb.q.to_rotation_matrix().into_inner();
        let half = half_q.to_rotation_matrix().into_inner();
        let rot_mid = rot * half;
        StepTerms {
            dt,
            rot,
            delta,
            delta_t: delta.to_rotation_matrix().into_inner().transpose(),
            half,
            rot_mid,
            f_bar,
            accel: rot_mid * f_bar + gravity(),
            jr: right_jacobian(&phi),
            jr_half: right_jacobian(&(phi * 0.5)),
        }
    }

    /// Body-frame displacement over the step, expressed in the starting body frame.
    fn body_displacement(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let dt = self.dt;
        let rt = self.rot.transpose();
        rt * v * dt + 0.5 * dt * dt * (self.half * self.f_bar + rt * gravity())
    }
}

impl FilterState {
    fn check_step(imu: &ImuSample, dt: f64) -> Result<()> {
        if !imu.is_finite() {
            return Err(VioError::RejectedSample(format!(
                "non-finite IMU sample at t={}",
                imu.timestamp
            )));
        }
        if !(dt > 0.0 && dt <= 0.1) {
            return Err(VioError::invalid(format!(
                "propagation step {dt} s outside (0, 0.1]"
            )));
        }
        Ok(())
    }

    /// Nominal-state propagation with an explicit noise sample
    /// `(n_f, n_ω, n_bf, n_bω)`; the covariance is left untouched.
    pub fn propagate_nominal(
        &self,
        imu: &ImuSample,
        dt: f64,
        noise: &SVector<f64, NOISE_DIM>,
    ) -> Result<FilterState> {
        Self::check_step(imu, dt)?;
        let mut out = self.clone();
        out.apply_nominal(imu, dt, noise);
        Ok(out)
    }

    fn apply_nominal(&mut self, imu: &ImuSample, dt: f64, noise: &SVector<f64, NOISE_DIM>) {
        let t = StepTerms::new(self, imu, dt, noise);
        let rb = &mut self.robot;
        let v0 = rb.v;
        rb.r += v0 * dt + 0.5 * dt * dt * t.accel;
        rb.v += t.accel * dt;
        rb.q = rb.q * t.delta;
        rb.q.renormalize();
        rb.b_f += noise.fixed_rows::<3>(6);
        rb.b_omega += noise.fixed_rows::<3>(9);

        let s = t.body_displacement(&v0);
        let min_rho = self.config.min_rho;
        let rig = self.rig.clone();
        for lm in self.slots_mut().iter_mut().flatten() {
            let ext = rig.get(lm.spectrum).extrinsics;
            let r_bc = ext.rotation.to_rotation_matrix().into_inner();
            let (p_c, _) = landmark_point(lm.alpha, lm.beta, lm.rho);
            let p_b = r_bc * p_c + ext.translation;
            let p_b_next = t.delta_t * (p_b - s);
            let p_c_next = r_bc.transpose() * (p_b_next - ext.translation);
            let (params, _) = landmark_params(&p_c_next);
            lm.alpha = params.x;
            lm.beta = params.y;
            lm.rho = params.z.max(min_rho);
        }
    }

    /// Error-state transition and noise Jacobians at the current state.
    pub fn propagation_jacobians(&self, imu: &ImuSample, dt: f64) -> Result<PropagationJacobians> {
        Self::check_step(imu, dt)?;
        let t = StepTerms::new(self, imu, dt, &SVector::zeros());
        let dt2 = 0.5 * dt * dt;
        let eye = Matrix3::identity();

        let da_theta = -t.rot * skew(&(t.half * t.f_bar));
        let da_bf = -t.rot_mid;
        let da_bw = t.rot_mid * skew(&t.f_bar) * t.jr_half * (0.5 * dt);

        let mut f = Mat15::identity();
        f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(da_theta * dt2));
        f.fixed_view_mut::<3, 3>(0, 6).copy_from(&(eye * dt));
        f.fixed_view_mut::<3, 3>(0, 9).copy_from(&(da_bf * dt2));
        f.fixed_view_mut::<3, 3>(0, 12).copy_from(&(da_bw * dt2));
        f.fixed_view_mut::<3, 3>(3, 3).copy_from(&t.delta_t);
        f.fixed_view_mut::<3, 3>(3, 12).copy_from(&(-t.jr * dt));
        f.fixed_view_mut::<3, 3>(6, 3).copy_from(&(da_theta * dt));
        f.fixed_view_mut::<3, 3>(6, 9).copy_from(&(da_bf * dt));
        f.fixed_view_mut::<3, 3>(6, 12).copy_from(&(da_bw * dt));

        let noise_robot = noise_columns(&f);

        let rt = t.rot.transpose();
        let v = self.robot.v;
        let s = t.body_displacement(&v);
        let s_theta = skew(&(rt * v * dt + dt2 * rt * gravity()));
        let s_v = rt * dt;
        let s_bf = -t.half * dt2;
        let s_bw = t.half * skew(&t.f_bar) * t.jr_half * (0.5 * dt) * dt2;

        let mut landmark_robot = Vec::new();
        let mut landmark_self = Vec::new();
        let mut noise_landmark = Vec::new();
        for lm in self.slots().iter().flatten() {
            let ext = self.rig.get(lm.spectrum).extrinsics;
            let r_bc = ext.rotation.to_rotation_matrix().into_inner();
            let (p_c, jp) = landmark_point(lm.alpha, lm.beta, lm.rho);
            let p_b = r_bc * p_c + ext.translation;
            let p_b_next = t.delta_t * (p_b - s);
            let p_c_next = r_bc.transpose() * (p_b_next - ext.translation);
            let (_, jh) = landmark_params(&p_c_next);
            let a = jh * r_bc.transpose();

            let mut lr = Mat3x15::zeros();
            lr.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(a * (-t.delta_t * s_theta)));
            lr.fixed_view_mut::<3, 3>(0, 6)
                .copy_from(&(a * (-t.delta_t * s_v)));
            lr.fixed_view_mut::<3, 3>(0, 9)
                .copy_from(&(a * (-t.delta_t * s_bf)));
            let d_bw = -t.delta_t * s_bw - skew(&p_b_next) * t.jr * dt;
            lr.fixed_view_mut::<3, 3>(0, 12).copy_from(&(a * d_bw));

            let mut gl = SMatrix::<f64, 3, NOISE_DIM>::zeros();
            gl.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&lr.fixed_view::<3, 3>(0, 9));
            gl.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&lr.fixed_view::<3, 3>(0, 12));

            landmark_self.push(a * t.delta_t * r_bc * jp);
            landmark_robot.push(lr);
            noise_landmark.push(gl);
        }
        Ok(PropagationJacobians {
            robot: f,
            landmark_robot,
            landmark_self,
            noise_robot,
            noise_landmark,
        })
    }

    /// One IMU step: nominal strapdown integration and `Σ ← F Σ Fᵀ + G Q Gᵀ`.
    ///
    /// The sample is held over `[t, t + dt]`; attitude and acceleration use the mid-step
    /// rotation so constant-rate motion integrates exactly.
    pub fn propagate(&mut self, imu: &ImuSample, dt: f64) -> Result<()> {
        let jac = self.propagation_jacobians(imu, dt)?;
        let noise = &self.config.imu;
        let q_diag = [
            noise.accel_noise_density.powi(2) / dt,
            noise.gyro_noise_density.powi(2) / dt,
            noise.accel_bias_walk.powi(2) * dt,
            noise.gyro_bias_walk.powi(2) * dt,
        ];
        let (bearing_q, rho_q) = (
            self.config.bearing_process_noise * dt,
            self.config.rho_process_noise * dt,
        );

        let fp = jac.left_mul(self.covariance());
        let mut p = jac.left_mul(&fp.transpose());
        let n = p.nrows();
        let mut l = DMatrix::zeros(n, NOISE_DIM);
        let g = &jac;
        for c in 0..NOISE_DIM {
            let s = q_diag[c / 3].sqrt();
            for r in 0..ROBOT_DIM {
                l[(r, c)] = g.noise_robot[(r, c)] * s;
            }
            for (k, gl) in g.noise_landmark.iter().enumerate() {
                let o = ROBOT_DIM + LANDMARK_DIM * k;
                for r in 0..LANDMARK_DIM {
                    l[(o + r, c)] = gl[(r, c)] * s;
                }
            }
        }
        p.gemm(1.0, &l, &l.transpose(), 1.0);
        for k in 0..jac.landmark_self.len() {
            let o = ROBOT_DIM + LANDMARK_DIM * k;
            p[(o, o)] += bearing_q;
            p[(o + 1, o + 1)] += bearing_q;
            p[(o + 2, o + 2)] += rho_q;
        }
        self.apply_nominal(imu, dt, &SVector::zeros());
        *self.covariance_mut() = p;
        self.symmetrize();
        Ok(())
    }
}

/// White noise enters exactly like a bias error, so `n_f` and `n_ω` reuse the bias columns
/// outside the bias rows; the bias random walks map straight onto the bias rows.
fn noise_columns(f: &Mat15) -> SMatrix<f64, 15, NOISE_DIM> {
    let mut g = SMatrix::<f64, 15, NOISE_DIM>::zeros();
    for r in 0..9 {
        for c in 0..3 {
            g[(r, c)] = f[(r, 9 + c)];
            g[(r, 3 + c)] = f[(r, 12 + c)];
        }
    }
    for i in 0..3 {
        g[(9 + i, 6 + i)] = 1.0;
        g[(12 + i, 9 + i)] = 1.0;
    }
    g
}
