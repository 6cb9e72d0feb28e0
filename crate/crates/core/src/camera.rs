//! Pinhole cameras with two-term radial distortion and their body-frame mounting.

use nalgebra::{Matrix2, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::imaging::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
}

impl PinholeModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        PinholeModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            k1: 0.0,
            k2: 0.0,
        }
    }

    #[inline]
    fn distortion(&self, xn: f64, yn: f64) -> f64 {
        let r2 = xn * xn + yn * yn;
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Pixel of a normalized image-plane point.
    pub fn project_normalized(&self, xn: f64, yn: f64) -> Vector2<f64> {
        let d = self.distortion(xn, yn);
        Vector2::new(self.cx + self.fx * d * xn, self.cy + self.fy * d * yn)
    }

    /// Jacobian of [`Self::project_normalized`].
    pub fn normalized_jacobian(&self, xn: f64, yn: f64) -> Matrix2<f64> {
        let r2 = xn * xn + yn * yn;
        let d = self.distortion(xn, yn);
        // d(d)/d(r2)
        let dd = self.k1 + 2.0 * self.k2 * r2;
        Matrix2::new(
            self.fx * (d + 2.0 * xn * xn * dd),
            self.fx * 2.0 * xn * yn * dd,
            self.fy * 2.0 * xn * yn * dd,
            self.fy * (d + 2.0 * yn * yn * dd),
        )
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 1e-9 {
            return None;
        }
        Some(self.project_normalized(p.x / p.z, p.y / p.z))
    }

    /// Normalized coordinates of a pixel (iterative undistortion when `k1`/`k2` are set).
    pub fn unproject(&self, u: f64, v: f64) -> Vector2<f64> {
        let xd = (u - self.cx) / self.fx;
        let yd = (v - self.cy) / self.fy;
        if self.k1 == 0.0 && self.k2 == 0.0 {
            return Vector2::new(xd, yd);
        }
        let (mut x, mut y) = (xd, yd);
        for _ in 0..20 {
            let d = self.distortion(x, y);
            x = xd / d;
            y = yd / d;
        }
        Vector2::new(x, y)
    }

    pub fn in_image(&self, u: f64, v: f64, margin: f64) -> bool {
        u >= margin
            && v >= margin
            && u <= self.width as f64 - 1.0 - margin
            && v <= self.height as f64 - 1.0 - margin
    }
}

/// Camera pose in the body frame: `p_body = rotation * p_camera + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    /// Camera looking along body +x with image x to body -y and image y to body -z.
    pub fn forward_looking(translation: Vector3<f64>) -> Self {
        let m = nalgebra::Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        Extrinsics {
            rotation: UnitQuaternion::from_matrix(&m),
            translation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub spectrum: Spectrum,
    pub intrinsics: PinholeModel,
    pub extrinsics: Extrinsics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub visual: Camera,
    pub thermal: Camera,
}

impl CameraRig {
    pub fn get(&self, spectrum: Spectrum) -> &Camera {
        match spectrum {
            Spectrum::Visual => &self.visual,
            Spectrum::Thermal => &self.thermal,
        }
    }

    /// Visual and thermal cameras side by side, both looking forward.
    pub fn default_pair(width: usize, height: usize) -> Self {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let f = 0.78 * width as f64;
        CameraRig {
            visual: Camera {
                spectrum: Spectrum::Visual,
                intrinsics: PinholeModel::new(f, f, cx, cy, width, height),
                extrinsics: Extrinsics::forward_looking(Vector3::new(0.08, 0.05, 0.02)),
            },
            thermal: Camera {
                spectrum: Spectrum::Thermal,
                intrinsics: PinholeModel::new(0.9 * f, 0.9 * f, cx + 1.5, cy - 1.0, width, height),
                extrinsics: Extrinsics::forward_looking(Vector3::new(0.08, -0.05, 0.02)),
            },
        }
    }
}
