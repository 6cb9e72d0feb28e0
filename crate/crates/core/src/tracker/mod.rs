//! Corner detection inside candidate regions, cross-spectral selection and photometric patch
//! alignment.

mod align;
mod detect;

pub use align::{align_patch, align_patch_warped, AlignParams, MatchResult};
pub use detect::{detect, select_best, DetectParams, FeatureCandidate};

use nalgebra::Matrix2;

use crate::imaging::Frame;

/// Float copy of a frame at successively halved resolutions.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    pub levels: Vec<FloatImage>,
}

#[derive(Debug, Clone)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    /// Bilinear lookup; `None` when the 2x2 support leaves the image.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let x0 = x as usize;
        let y0 = y as usize;
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            return None;
        }
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let i = y0 * self.width + x0;
        let d = &self.data;
        let top = d[i] + (d[i + 1] - d[i]) * fx;
        let bottom = d[i + self.width] + (d[i + self.width + 1] - d[i + self.width]) * fx;
        Some((top + (bottom - top) * fy) as f64)
    }

    fn half(&self) -> FloatImage {
        let w = self.width / 2;
        let h = self.height / 2;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let r0 = 2 * y * self.width;
            let r1 = r0 + self.width;
            for x in 0..w {
                let s = self.data[r0 + 2 * x]
                    + self.data[r0 + 2 * x + 1]
                    + self.data[r1 + 2 * x]
                    + self.data[r1 + 2 * x + 1];
                data.push(0.25 * s);
            }
        }
        FloatImage {
            width: w,
            height: h,
            data,
        }
    }
}

impl ImagePyramid {
    pub fn new(frame: &Frame, levels: usize) -> Self {
        let base = FloatImage {
            width: frame.width(),
            height: frame.height(),
            data: frame.pixels().iter().map(|&p| p as f32).collect(),
        };
        let mut out = vec![base];
        for _ in 1..levels.max(1) {
            let next = out.last().unwrap().half();
            out.push(next);
        }
        ImagePyramid { levels: out }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Level-0 pixel coordinate to level `l` (2x2 box downsampling keeps pixel centers aligned).
#[inline]
pub(crate) fn to_level(v: f64, level: usize) -> f64 {
    let s = (1u32 << level) as f64;
    (v + 0.5) / s - 0.5
}

#[inline]
pub(crate) fn from_level(v: f64, level: usize) -> f64 {
    let s = (1u32 << level) as f64;
    (v + 0.5) * s - 0.5
}

/// Square reference patch with precomputed gradients and Gauss-Newton Hessian.
#[derive(Debug, Clone)]
pub struct Patch {
    pub size: usize,
    pub intensity: Vec<f64>,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
    pub hessian: Matrix2<f64>,
}

impl Patch {
    /// Smallest eigenvalue of the Hessian divided by the pixel count.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = &self.hessian;
        let tr = 0.5 * (h[(0, 0)] + h[(1, 1)]);
        let d = (0.25 * (h[(0, 0)] - h[(1, 1)]).powi(2) + h[(0, 1)] * h[(1, 0)]).sqrt();
        (tr - d) / (self.size * self.size) as f64
    }
}

/// Patches around one feature, one per pyramid level.
#[derive(Debug, Clone)]
pub struct PatchPyramid {
    pub levels: Vec<Patch>,
}

/// Offsets of patch samples from the patch center.
#[inline]
pub(crate) fn patch_offset(i: usize, size: usize) -> f64 {
    i as f64 - (size as f64 - 1.0) / 2.0
}

/// Half-extent in level-0 pixels that a patch pyramid needs around its center, gradient
/// border included.
pub fn patch_margin(size: usize, levels: usize) -> f64 {
    let top = levels.max(1) - 1;
    let half = (size as f64 - 1.0) / 2.0 + 2.0;
    from_level(half, top) + 1.0
}

/// Samples a patch pyramid centered at level-0 pixel `(x, y)`. `None` near the border.
pub fn extract_patch_pyramid(
    pyramid: &ImagePyramid,
    x: f64,
    y: f64,
    size: usize,
    levels: usize,
) -> Option<PatchPyramid> {
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels.min(pyramid.num_levels()) {
        let img = &pyramid.levels[level];
        let (cx, cy) = (to_level(x, level), to_level(y, level));
        let n = size * size;
        let mut intensity = Vec::with_capacity(n);
        let mut grad_x = Vec::with_capacity(n);
        let mut grad_y = Vec::with_capacity(n);
        let mut hessian = Matrix2::zeros();
        for j in 0..size {
            for i in 0..size {
                let (px, py) = (cx + patch_offset(i, size), cy + patch_offset(j, size));
                let c = img.sample(px, py)?;
                let gx = 0.5 * (img.sample(px + 1.0, py)? - img.sample(px - 1.0, py)?);
                let gy = 0.5 * (img.sample(px, py + 1.0)? - img.sample(px, py - 1.0)?);
                intensity.push(c);
                grad_x.push(gx);
                grad_y.push(gy);
                hessian[(0, 0)] += gx * gx;
                hessian[(0, 1)] += gx * gy;
                hessian[(1, 1)] += gy * gy;
            }
        }
        hessian[(1, 0)] = hessian[(0, 1)];
        out.push(Patch {
            size,
            intensity,
            grad_x,
            grad_y,
            hessian,
        });
    }
    if out.len() < levels {
        return None;
    }
    Some(PatchPyramid { levels: out })
}
