use std::cmp::Ordering;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::entropy::{mask_lookup, RegionEntropyMap};
use crate::error::{Result, VioError};
use crate::imaging::{sobel, Frame, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    /// Minimum spacing between candidates and already tracked features, pixels.
    pub min_distance: f64,
    /// Absolute Shi-Tomasi threshold on the Sobel structure tensor.
    pub min_score: f64,
    /// Keep-out band along the image border, pixels.
    pub border: f64,
    pub max_candidates: usize,
    /// Half-width of the uniform jitter added after sub-pixel refinement.
    pub jitter_px: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            min_distance: 20.0,
            min_score: 3.0e4,
            border: 14.0,
            max_candidates: 60,
            jitter_px: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureCandidate {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub spectrum: Spectrum,
    pub region_index: usize,
}

/// Shi-Tomasi minimum eigenvalue over 3x3 windows of the Sobel structure tensor.
fn min_eigen_scores(frame: &Frame) -> Vec<f64> {
    let (w, h) = (frame.width(), frame.height());
    let (gx, gy) = sobel(frame);
    let mut xx = vec![0.0; w * h];
    let mut xy = vec![0.0; w * h];
    let mut yy = vec![0.0; w * h];
    for i in 0..w * h {
        xx[i] = gx[i] * gx[i];
        xy[i] = gx[i] * gy[i];
        yy[i] = gy[i] * gy[i];
    }
    let box3 = |src: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 1..w - 1 {
                let i = y * w + x;
                tmp[i] = src[i - 1] + src[i] + src[i + 1];
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 1..h - 1 {
            for x in 0..w {
                let i = y * w + x;
                out[i] = tmp[i - w] + tmp[i] + tmp[i + w];
            }
        }
        out
    };
    let (sxx, sxy, syy) = (box3(&xx), box3(&xy), box3(&yy));
    sxx.iter()
        .zip(&sxy)
        .zip(&syy)
        .map(|((&a, &b), &c)| {
            let half_tr = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            (half_tr - disc).max(0.0)
        })
        .collect()
}

fn parabola_peak(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

/// Detects corners inside candidate regions of `mask`.
///
/// Output is sorted by descending score and respects `min_distance` among itself and against
/// `occupied` (features already tracked in this spectrum). Pass
/// [`RegionEntropyMap::accept_all`] to detect over the whole frame.
pub fn detect(
    frame: &Frame,
    mask: &RegionEntropyMap,
    occupied: &[(f64, f64)],
    params: &DetectParams,
    mut jitter: Option<&mut dyn RngCore>,
) -> Result<Vec<FeatureCandidate>> {
    if mask.grid.width != frame.width() || mask.grid.height != frame.height() {
        return Err(VioError::invalid("mask and frame dimensions differ"));
    }
    if mask.candidate_count() == 0 {
        return Ok(Vec::new());
    }
    let (w, h) = (frame.width(), frame.height());
    let scores = min_eigen_scores(frame);
    let border = params.border.ceil().max(2.0) as usize;
    if 2 * border >= w || 2 * border >= h {
        return Ok(Vec::new());
    }

    let mut peaks: Vec<(usize, usize, f64)> = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            let s = scores[y * w + x];
            if s < params.min_score {
                continue;
            }
            if !mask_lookup(mask, x as f64, y as f64)? {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = scores[(y as i64 + dy) as usize * w + (x as i64 + dx) as usize];
                    // Earlier neighbors must be strictly lower, later ones lower-or-equal.
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > s || (earlier && n == s) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                peaks.push((x, y, s));
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });

    let min_d2 = params.min_distance * params.min_distance;
    let mut out: Vec<FeatureCandidate> = Vec::new();
    for (x, y, s) in peaks {
        if out.len() >= params.max_candidates {
            break;
        }
        let i = y * w + x;
        let mut fx = x as f64 + parabola_peak(scores[i - 1], s, scores[i + 1]);
        let mut fy = y as f64 + parabola_peak(scores[i - w], s, scores[i + w]);
        if let Some(rng) = jitter.as_deref_mut() {
            if params.jitter_px > 0.0 {
                fx += rng.random_range(-params.jitter_px..=params.jitter_px);
                fy += rng.random_range(-params.jitter_px..=params.jitter_px);
            }
        }
        if !mask_lookup(mask, fx, fy)? {
            continue;
        }
        let far = |(ox, oy): (f64, f64)| (ox - fx).powi(2) + (oy - fy).powi(2) >= min_d2;
        if !occupied.iter().copied().all(far) || !out.iter().map(|c| (c.x, c.y)).all(far) {
            continue;
        }
        out.push(FeatureCandidate {
            x: fx,
            y: fy,
            score: s,
            spectrum: frame.spectrum,
            region_index: mask.grid.region_of(fx as usize, fy as usize),
        });
    }
    Ok(out)
}

/// Picks up to `free_slots` candidates across both spectra.
///
/// Scores are divided by the best score of their own spectrum before merging; ties prefer
/// visual, then lower `x`, then lower `y`.
pub fn select_best(
    visual: &[FeatureCandidate],
    thermal: &[FeatureCandidate],
    free_slots: usize,
) -> Vec<FeatureCandidate> {
    if free_slots == 0 {
        return Vec::new();
    }
    let normalized = |list: &[FeatureCandidate]| -> Vec<(f64, FeatureCandidate)> {
        let max = list.iter().map(|c| c.score).fold(0.0f64, f64::max);
        list.iter()
            .filter(|c| c.score > 0.0 && max > 0.0)
            .map(|c| (c.score / max, *c))
            .collect()
    };
    let mut pool = normalized(visual);
    pool.extend(normalized(thermal));
    pool.sort_by(|(sa, a), (sb, b)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then(a.spectrum.cmp(&b.spectrum))
            .then(a.x.partial_cmp(&b.x).unwrap_or(Ordering::Equal))
            .then(a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
    });
    pool.into_iter().take(free_slots).map(|(_, c)| c).collect()
}
