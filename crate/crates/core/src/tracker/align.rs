use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{from_level, patch_margin, patch_offset, to_level, ImagePyramid, PatchPyramid};
use crate::error::{Result, VioError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignParams {
    /// Gauss-Newton iterations per pyramid level.
    pub max_iterations: usize,
    /// Mean absolute intensity error accepted at the finest level.
    pub residual_threshold: f64,
    /// Per-pixel minimum Hessian eigenvalue below which a patch is gradient-deficient.
    pub min_gradient_eig: f64,
    pub step_tolerance: f64,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            max_iterations: 15,
            residual_threshold: 14.0,
            min_gradient_eig: 4.0,
            step_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub measured_pixel: Vector2<f64>,
    /// Mean absolute intensity error at the finest level.
    pub photometric_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Coarse-to-fine inverse-compositional alignment of a translation-only warp.
///
/// Starts at `predicted` and fails (non-converged) when the solution leaves `search_radius`,
/// the reference patch lacks gradient, or the final residual is above threshold. A prediction
/// without room for the patch is reported as [`VioError::OutOfView`].
pub fn align_patch(
    pyramid: &ImagePyramid,
    reference: &PatchPyramid,
    predicted: Vector2<f64>,
    search_radius: f64,
    params: &AlignParams,
) -> Result<MatchResult> {
    align_patch_warped(
        pyramid,
        reference,
        predicted,
        &Matrix2::identity(),
        search_radius,
        params,
    )
}

/// [`align_patch`] with the reference patch seen through a fixed affine `warp`: patch offset
/// `o` is sampled at `position + warp·o` in the current image. Only the translation is solved.
pub fn align_patch_warped(
    pyramid: &ImagePyramid,
    reference: &PatchPyramid,
    predicted: Vector2<f64>,
    warp: &Matrix2<f64>,
    search_radius: f64,
    params: &AlignParams,
) -> Result<MatchResult> {
    let levels = reference.levels.len().min(pyramid.num_levels());
    if levels == 0 {
        return Err(VioError::invalid("empty patch pyramid"));
    }
    let size = reference.levels[0].size;
    let base = &pyramid.levels[0];
    let stretch =
        (warp[(0, 0)].abs() + warp[(0, 1)].abs()).max(warp[(1, 0)].abs() + warp[(1, 1)].abs());
    let margin = patch_margin(size, levels) * stretch.max(1.0);
    if !(predicted.x >= margin
        && predicted.y >= margin
        && predicted.x <= base.width as f64 - 1.0 - margin
        && predicted.y <= base.height as f64 - 1.0 - margin)
    {
        return Err(VioError::OutOfView);
    }

    let fail = |pos: Vector2<f64>, iterations: usize| MatchResult {
        measured_pixel: pos,
        photometric_residual: f64::INFINITY,
        converged: false,
        iterations,
    };

    let mut pos = predicted;
    let mut iterations = 0;
    let mut finest_converged = false;
    for level in (0..levels).rev() {
        let patch = &reference.levels[level];
        let deficient = patch.min_eigenvalue() < params.min_gradient_eig;
        if deficient {
            if level == 0 {
                return Ok(fail(pos, iterations));
            }
            continue;
        }
        let hinv = match patch.hessian.try_inverse() {
            Some(h) => h,
            None => return Ok(fail(pos, iterations)),
        };
        let img = &pyramid.levels[level];
        let mut p = Vector2::new(to_level(pos.x, level), to_level(pos.y, level));
        let mut level_converged = false;
        for _ in 0..params.max_iterations {
            let mut b = Vector2::zeros();
            for j in 0..patch.size {
                for i in 0..patch.size {
                    let k = j * patch.size + i;
                    let o = warp
                        * Vector2::new(patch_offset(i, patch.size), patch_offset(j, patch.size));
                    let Some(v) = img.sample(p.x + o.x, p.y + o.y) else {
                        return Ok(fail(pos, iterations));
                    };
                    let e = v - patch.intensity[k];
                    b.x += patch.grad_x[k] * e;
                    b.y += patch.grad_y[k] * e;
                }
            }
            let step = hinv * b;
            p -= warp * step;
            iterations += 1;
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Ok(fail(pos, iterations));
            }
            if step.norm() < params.step_tolerance {
                level_converged = true;
                break;
            }
        }
        pos = Vector2::new(from_level(p.x, level), from_level(p.y, level));
        if (pos - predicted).norm() > search_radius {
            return Ok(fail(pos, iterations));
        }
        if level == 0 {
            finest_converged = level_converged;
        }
    }

    let patch = &reference.levels[0];
    let mut abs_sum = 0.0;
    for j in 0..patch.size {
        for i in 0..patch.size {
            let o = warp * Vector2::new(patch_offset(i, patch.size), patch_offset(j, patch.size));
            let Some(v) = base.sample(pos.x + o.x, pos.y + o.y) else {
                return Ok(fail(pos, iterations));
            };
            abs_sum += (v - patch.intensity[j * patch.size + i]).abs();
        }
    }
    let residual = abs_sum / (patch.size * patch.size) as f64;
    Ok(MatchResult {
        measured_pixel: pos,
        photometric_residual: residual,
        converged: finest_converged && residual <= params.residual_threshold,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{Frame, Spectrum};
    use crate::tracker::extract_patch_pyramid;

    fn blob_frame(w: usize, h: usize, shift_x: f64, shift_y: f64) -> Frame {
        zoomed_blob_frame(w, h, shift_x, shift_y, 1.0)
    }

    /// The blob pattern magnified by `zoom` about `(40, 30)`, then shifted.
    fn zoomed_blob_frame(w: usize, h: usize, shift_x: f64, shift_y: f64, zoom: f64) -> Frame {
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let xf = (x as f64 - shift_x - 40.0) / zoom + 40.0;
                let yf = (y as f64 - shift_y - 30.0) / zoom + 30.0;
                let v = 120.0
                    + 50.0 * (xf * 0.31).sin() * (yf * 0.23).cos()
                    + 35.0 * ((xf + 2.0 * yf) * 0.17).sin()
                    + 20.0 * ((xf - yf) * 0.41).cos();
                px.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        Frame::new(w, h, px, 0.0, Spectrum::Visual, "cam").unwrap()
    }

    fn reference_at(frame: &Frame, x: f64, y: f64) -> PatchPyramid {
        extract_patch_pyramid(&ImagePyramid::new(frame, 2), x, y, 8, 2).unwrap()
    }

    #[test]
    fn identity_alignment() {
        let f = blob_frame(80, 60, 0.0, 0.0);
        let reference = reference_at(&f, 40.0, 30.0);
        let m = align_patch(
            &ImagePyramid::new(&f, 2),
            &reference,
            Vector2::new(40.0, 30.0),
            10.0,
            &AlignParams::default(),
        )
        .unwrap();
        assert!(m.converged);
        assert!((m.measured_pixel - Vector2::new(40.0, 30.0)).norm() < 0.01);
        assert!(m.photometric_residual < 1e-3);
    }

    #[test]
    fn recovers_two_pixel_translation() {
        let f0 = blob_frame(80, 60, 0.0, 0.0);
        let f1 = blob_frame(80, 60, 2.0, 0.0);
        let reference = reference_at(&f0, 40.0, 30.0);
        let m = align_patch(
            &ImagePyramid::new(&f1, 2),
            &reference,
            Vector2::new(40.0, 30.0),
            10.0,
            &AlignParams::default(),
        )
        .unwrap();
        assert!(m.converged, "{m:?}");
        let off = m.measured_pixel - Vector2::new(40.0, 30.0);
        assert!((off - Vector2::new(2.0, 0.0)).norm() < 0.1, "{off:?}");
    }

    #[test]
    fn integer_shift_equivariance() {
        let f0 = blob_frame(90, 70, 0.0, 0.0);
        let f1 = blob_frame(90, 70, 1.3, -0.7);
        let reference = reference_at(&f0, 40.0, 30.0);
        let a = align_patch(
            &ImagePyramid::new(&f1, 2),
            &reference,
            Vector2::new(40.0, 30.0),
            10.0,
            &AlignParams::default(),
        )
        .unwrap();
        // Shift the whole frame and the prediction by (5, 3) pixels.
        let shifted = blob_frame(90, 70, 1.3 + 5.0, -0.7 + 3.0);
        let b = align_patch(
            &ImagePyramid::new(&shifted, 2),
            &reference,
            Vector2::new(45.0, 33.0),
            10.0,
            &AlignParams::default(),
        )
        .unwrap();
        assert!(a.converged && b.converged);
        let d = b.measured_pixel - a.measured_pixel - Vector2::new(5.0, 3.0);
        assert!(d.norm() < 0.05, "{d:?}");
    }

    #[test]
    fn flat_fogged_area_does_not_converge() {
        let clean = blob_frame(80, 60, 0.0, 0.0);
        let fog = Frame::constant(80, 60, 215, 0.0, Spectrum::Visual).unwrap();
        let pyr = ImagePyramid::new(&fog, 2);
        // Reference from a clean frame: residual stays large.
        let m = align_patch(
            &pyr,
            &reference_at(&clean, 40.0, 30.0),
            Vector2::new(40.0, 30.0),
            10.0,
            &AlignParams::default(),
        )
        .unwrap();
        assert!(!m.converged);
        // Reference from the fogged frame itself: gradient-deficient.
        let m = align_patch(
            &pyr,
            &reference_at(&fog, 40.0, 30.0),
            Vector2::new(40.0, 30.0),
            10.0,
            &AlignParams::default(),
        )
        .unwrap();
        assert!(!m.converged);
    }

    #[test]
    fn prediction_outside_frame_is_out_of_view() {
        let f = blob_frame(80, 60, 0.0, 0.0);
        let reference = reference_at(&f, 40.0, 30.0);
        let r = align_patch(
            &ImagePyramid::new(&f, 2),
            &reference,
            Vector2::new(-5.0, 30.0),
            10.0,
            &AlignParams::default(),
        );
        assert!(matches!(r, Err(VioError::OutOfView)));
    }

    #[test]
    fn large_motion_outside_search_radius_fails() {
        let f0 = blob_frame(80, 60, 0.0, 0.0);
        let f1 = blob_frame(80, 60, 2.0, 0.0);
        let m = align_patch(
            &ImagePyramid::new(&f1, 2),
            &reference_at(&f0, 40.0, 30.0),
            Vector2::new(40.0, 30.0),
            1.0,
            &AlignParams::default(),
        )
        .unwrap();
        assert!(!m.converged);
    }

    #[test]
    fn warp_compensates_scale_change() {
        let f0 = blob_frame(90, 70, 0.0, 0.0);
        let f1 = zoomed_blob_frame(90, 70, 1.5, -1.0, 1.3);
        let reference = reference_at(&f0, 40.0, 30.0);
        let pyr = ImagePyramid::new(&f1, 2);
        let start = Vector2::new(40.0, 30.0);
        let params = AlignParams::default();
        let warped = align_patch_warped(
            &pyr,
            &reference,
            start,
            &Matrix2::identity().scale(1.3),
            10.0,
            &params,
        )
        .unwrap();
        assert!(warped.converged, "{warped:?}");
        assert!(
            (warped.measured_pixel - Vector2::new(41.5, 29.0)).norm() < 0.1,
            "{warped:?}"
        );
        let plain = align_patch(&pyr, &reference, start, 10.0, &params).unwrap();
        assert!(warped.photometric_residual < plain.photometric_residual);
    }
}
