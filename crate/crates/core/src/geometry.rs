//! SO(3) helpers and the azimuth/elevation/inverse-depth landmark parameterization.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

pub const GRAVITY: f64 = 9.81;

/// World-frame gravity vector, z up.
pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
pub fn exp_so3(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*phi)
}

#[inline]
pub fn log_so3(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    q.scaled_axis()
}

/// Right Jacobian of SO(3): `Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

/// ZYX Euler angles `(roll, pitch, yaw)` to a body-to-world rotation.
pub fn quat_from_rpy(roll: f64, pitch: f64, yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(roll, pitch, yaw)
}

pub fn yaw_of(q: &UnitQuaternion<f64>) -> f64 {
    q.euler_angles().2
}

/// Unit direction for azimuth `alpha` (about camera y) and elevation `beta`.
#[inline]
pub fn bearing_vector(alpha: f64, beta: f64) -> Vector3<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    Vector3::new(cb * sa, sb, cb * ca)
}

/// Point in the camera frame and its Jacobian w.r.t. `(alpha, beta, rho)`.
pub fn landmark_point(alpha: f64, beta: f64, rho: f64) -> (Vector3<f64>, Matrix3<f64>) {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let m = Vector3::new(cb * sa, sb, cb * ca);
    let dm_da = Vector3::new(cb * ca, 0.0, -cb * sa);
    let dm_db = Vector3::new(-sb * sa, cb, -sb * ca);
    let inv = 1.0 / rho;
    let jac = Matrix3::from_columns(&[dm_da * inv, dm_db * inv, -m * (inv * inv)]);
    (m * inv, jac)
}

/// Inverse of [`landmark_point`]: `(alpha, beta, rho)` and its Jacobian w.r.t. the point.
pub fn landmark_params(p: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let h2 = p.x * p.x + p.z * p.z;
    let h = h2.sqrt();
    let n2 = h2 + p.y * p.y;
    let n = n2.sqrt();
    let alpha = p.x.atan2(p.z);
    let beta = p.y.atan2(h);
    let rho = 1.0 / n;
    let da = Vector3::new(p.z / h2, 0.0, -p.x / h2);
    let db = Vector3::new(-p.y * p.x / (n2 * h), h / n2, -p.y * p.z / (n2 * h));
    let dr = -p / (n2 * n);
    let jac = Matrix3::from_rows(&[da.transpose(), db.transpose(), dr.transpose()]);
    (Vector3::new(alpha, beta, rho), jac)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = a % two_pi;
    if x <= -std::f64::consts::PI {
        x += two_pi;
    } else if x > std::f64::consts::PI {
        x -= two_pi;
    }
    x
}
