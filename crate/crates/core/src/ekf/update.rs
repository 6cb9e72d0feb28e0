use log::warn;
use nalgebra::{DMatrix, Matrix2, Matrix2x3, Matrix3, Vector2};

use super::{FilterState, TrackedLandmark, LANDMARK_DIM};
use crate::error::{Result, VioError};
use crate::tracker::{select_best, FeatureCandidate, MatchResult, PatchPyramid};

/// Predicted pixel of a landmark with its first-order covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPrediction {
    pub pixel: Vector2<f64>,
    pub covariance: Matrix2<f64>,
    /// Derivative of the pixel w.r.t. the landmark's `(α, β, ρ)`.
    pub jacobian: Matrix2x3<f64>,
}

impl PixelPrediction {
    /// Three-sigma radius of the larger principal axis, clamped to `[floor, cap]`.
    pub fn search_radius(&self, floor: f64, cap: f64) -> f64 {
        let c = &self.covariance;
        let half_tr = 0.5 * (c[(0, 0)] + c[(1, 1)]);
        let d = (0.25 * (c[(0, 0)] - c[(1, 1)]).powi(2) + c[(0, 1)] * c[(1, 0)]).sqrt();
        (3.0 * (half_tr + d).max(0.0).sqrt()).clamp(floor, cap)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateOutcome {
    pub applied: Vec<usize>,
    /// Slots whose innovation failed the chi-square gate.
    pub gated: Vec<usize>,
    /// Slots skipped for numerical reasons, non-convergence, or leaving the view.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InsertionReport {
    pub dropped: Vec<u64>,
    pub inserted: Vec<(usize, FeatureCandidate)>,
    pub insertions_total: u64,
}

impl FilterState {
    /// Projects the landmark in `slot` into its owning camera.
    pub fn predict_pixel(&self, slot: usize) -> Result<PixelPrediction> {
        let lm = self
            .landmark(slot)
            .ok_or_else(|| VioError::invalid(format!("landmark slot {slot} is empty")))?;
        let (sa, ca) = lm.alpha.sin_cos();
        let (sb, cb) = lm.beta.sin_cos();
        if ca * cb < 1e-3 {
            return Err(VioError::OutOfView);
        }
        let intr = &self.rig.get(lm.spectrum).intrinsics;
        let tb = sb / cb;
        let xn = sa / ca;
        let yn = tb / ca;
        let pixel = intr.project_normalized(xn, yn);
        let dn = Matrix2::new(
            1.0 / (ca * ca),
            0.0,
            tb * sa / (ca * ca),
            1.0 / (cb * cb * ca),
        );
        let h2 = intr.normalized_jacobian(xn, yn) * dn;
        let mut jacobian = Matrix2x3::zeros();
        jacobian.fixed_view_mut::<2, 2>(0, 0).copy_from(&h2);
        let off = self.block_offset(slot).expect("active slot has a block");
        let p = self
            .covariance()
            .fixed_view::<LANDMARK_DIM, LANDMARK_DIM>(off, off);
        let covariance = jacobian * p * jacobian.transpose();
        Ok(PixelPrediction {
            pixel,
            covariance,
            jacobian,
        })
    }

    /// Dense measurement Jacobian `∂pixel/∂δx` (2 x error_dim) and the predicted pixel.
    pub fn measurement_jacobian(&self, slot: usize) -> Result<(Vector2<f64>, DMatrix<f64>)> {
        let pred = self.predict_pixel(slot)?;
        let mut h = DMatrix::zeros(2, self.error_dim());
        let off = self.block_offset(slot).expect("active slot has a block");
        h.fixed_view_mut::<2, 3>(0, off).copy_from(&pred.jacobian);
        Ok((pred.pixel, h))
    }

    /// Sequential EKF updates with pixel innovations, gated at `config.chi2_gate`.
    ///
    /// Consumed matches reset their landmark's miss counter; gated or non-converged ones
    /// count as a miss.
    pub fn update(&mut self, matches: &[(usize, MatchResult)]) -> Result<UpdateOutcome> {
        let mut out = UpdateOutcome::default();
        let r = self.config.sigma_px * self.config.sigma_px;
        for &(slot, m) in matches {
            if self.landmark(slot).is_none() {
                return Err(VioError::invalid(format!("landmark slot {slot} is empty")));
            }
            if !m.converged {
                self.record_miss(slot);
                out.skipped.push(slot);
                continue;
            }
            let pred = match self.predict_pixel(slot) {
                Ok(p) => p,
                Err(VioError::OutOfView) => {
                    self.landmark_mut(slot).unwrap().out_of_view = true;
                    out.skipped.push(slot);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let y = m.measured_pixel - pred.pixel;
            let s = pred.covariance + Matrix2::identity() * r;
            let Some(s_inv) = s.try_inverse() else {
                warn!("singular innovation covariance for slot {slot}, skipping match");
                out.skipped.push(slot);
                continue;
            };
            if (y.transpose() * s_inv * y)[(0, 0)] > self.config.chi2_gate {
                self.record_miss(slot);
                out.gated.push(slot);
                continue;
            }
            let off = self.block_offset(slot).unwrap();
            let pht = self.covariance().columns(off, LANDMARK_DIM) * pred.jacobian.transpose();
            let k = &pht * s_inv;
            let dx = &k * y;
            let ks = &k * s;
            let p = self.covariance_mut();
            p.gemm(-1.0, &k, &pht.transpose(), 1.0);
            p.gemm(-1.0, &pht, &k.transpose(), 1.0);
            p.gemm(1.0, &ks, &k.transpose(), 1.0);
            self.symmetrize();
            self.boxplus(&dx)?;
            let lm = self.landmark_mut(slot).unwrap();
            lm.consecutive_misses = 0;
            lm.frames_tracked += 1;
            lm.last_pixel = m.measured_pixel;
            out.applied.push(slot);
        }
        Ok(out)
    }

    pub fn record_miss(&mut self, slot: usize) {
        if let Some(lm) = self.landmark_mut(slot) {
            lm.consecutive_misses += 1;
        }
    }

    /// Removes landmarks at the miss limit or flagged out of view; returns their ids.
    pub fn drop_stale(&mut self) -> Vec<u64> {
        let limit = self.config.miss_limit;
        let stale: Vec<usize> = self
            .active_slots()
            .into_iter()
            .filter(|&s| {
                let lm = self.landmark(s).unwrap();
                lm.out_of_view || lm.consecutive_misses >= limit
            })
            .collect();
        stale
            .into_iter()
            .filter_map(|s| self.remove_landmark(s).map(|lm| lm.id))
            .collect()
    }

    /// Drops stale landmarks, then fills free slots with the best candidates across spectra.
    ///
    /// `patch_for` extracts the reference patch of a candidate; candidates without one are
    /// passed over. New landmarks start at `rho_init` with variance `sigma_rho²` and a bearing
    /// covariance from the pixel noise.
    pub fn manage_landmarks(
        &mut self,
        visual: &[FeatureCandidate],
        thermal: &[FeatureCandidate],
        mut patch_for: impl FnMut(&FeatureCandidate) -> Option<PatchPyramid>,
    ) -> InsertionReport {
        let dropped = self.drop_stale();
        let mut free = self.slot_count() - self.active_count();
        let mut inserted = Vec::new();
        for c in select_best(visual, thermal, usize::MAX) {
            if free == 0 {
                break;
            }
            let Some(patch) = patch_for(&c) else {
                continue;
            };
            if let Some(slot) = self.insert_from_pixel(&c, patch) {
                inserted.push((slot, c));
                free -= 1;
            }
        }
        InsertionReport {
            dropped,
            inserted,
            insertions_total: self.insertion_counter,
        }
    }

    fn insert_from_pixel(&mut self, c: &FeatureCandidate, patch: PatchPyramid) -> Option<usize> {
        let intr = self.rig.get(c.spectrum).intrinsics;
        let n = intr.unproject(c.x, c.y);
        let alpha = n.x.atan();
        let beta = (n.y * alpha.cos()).atan();
        let lm = TrackedLandmark {
            id: self.insertion_counter,
            alpha,
            beta,
            rho: self.config.rho_init,
            spectrum: c.spectrum,
            patch,
            frames_tracked: 0,
            consecutive_misses: 0,
            out_of_view: false,
            last_pixel: Vector2::new(c.x, c.y),
        };
        // Pixel noise mapped back through the projection.
        let (sa, ca) = alpha.sin_cos();
        let (sb, cb) = beta.sin_cos();
        let tb = sb / cb;
        let dn = Matrix2::new(
            1.0 / (ca * ca),
            0.0,
            tb * sa / (ca * ca),
            1.0 / (cb * cb * ca),
        );
        let h2 = intr.normalized_jacobian(n.x, n.y) * dn;
        let h_inv = h2.try_inverse()?;
        let sig_px2 = self.config.sigma_px * self.config.sigma_px;
        let cov_ab = h_inv * h_inv.transpose() * sig_px2;
        let mut cov = Matrix3::zeros();
        cov.fixed_view_mut::<2, 2>(0, 0).copy_from(&cov_ab);
        cov[(2, 2)] = self.config.sigma_rho * self.config.sigma_rho;
        self.insert_landmark(lm, &cov)
    }
}
