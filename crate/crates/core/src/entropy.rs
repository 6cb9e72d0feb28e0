//! Region-wise Gaussian-weighted spatial entropy and the temporally gated feature-selection mask.
//!
//! Each frame's gradient image is split into an `R x R` grid. Every region gets a histogram of its
//! gradient magnitudes, and the Shannon entropy of that histogram is weighted bin-by-bin with a
//! Gaussian so mid-range gradient strengths dominate. Regions strictly above the frame mean are
//! "above mean"; a region becomes a [`RegionStatus::Candidate`] only after it has stayed above the
//! mean for `K` consecutive frames of its stream.

use std::collections::VecDeque;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Result, VioError};
use crate::imaging::{
    gradient_edges, histogram_rect, Frame, GradientImage, ProbabilityVector, Rect,
};

/// `R x R` tiling of a frame. Remainder pixels go to the last row and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionGrid {
    pub grid_r: usize,
    pub width: usize,
    pub height: usize,
    pub region_rects: Vec<Rect>,
    cell_w: usize,
    cell_h: usize,
}

impl RegionGrid {
    pub fn new(width: usize, height: usize, grid_r: usize) -> Result<Self> {
        if grid_r == 0 || grid_r > width || grid_r > height {
            return Err(VioError::invalid(format!(
                "cannot split {width}x{height} into {grid_r}x{grid_r} regions"
            )));
        }
        let cell_w = width / grid_r;
        let cell_h = height / grid_r;
        let mut region_rects = Vec::with_capacity(grid_r * grid_r);
        for row in 0..grid_r {
            for col in 0..grid_r {
                let x = col * cell_w;
                let y = row * cell_h;
                let w = if col + 1 == grid_r { width - x } else { cell_w };
                let h = if row + 1 == grid_r {
                    height - y
                } else {
                    cell_h
                };
                region_rects.push(Rect {
                    x,
                    y,
                    width: w,
                    height: h,
                });
            }
        }
        Ok(RegionGrid {
            grid_r,
            width,
            height,
            region_rects,
            cell_w,
            cell_h,
        })
    }

    pub fn len(&self) -> usize {
        self.region_rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_rects.is_empty()
    }

    /// Row-major index of the region containing an in-bounds pixel.
    pub fn region_of(&self, x: usize, y: usize) -> usize {
        let col = (x / self.cell_w).min(self.grid_r - 1);
        let row = (y / self.cell_h).min(self.grid_r - 1);
        row * self.grid_r + col
    }
}

/// Per-bin weights `exp(-(k - center)^2 / (2 sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWeightVector {
    pub weights: Vec<f64>,
    pub center_bin: f64,
    pub sigma_bins: f64,
}

impl GaussianWeightVector {
    pub fn new(bins: usize, center_bin: f64, sigma_bins: f64) -> Result<Self> {
        if bins == 0 || !(sigma_bins > 0.0) || !center_bin.is_finite() {
            return Err(VioError::invalid(
                "gaussian weights need bins > 0, finite center and sigma > 0",
            ));
        }
        let weights = (0..bins)
            .map(|k| {
                let d = k as f64 - center_bin;
                (-d * d / (2.0 * sigma_bins * sigma_bins)).exp()
            })
            .collect();
        Ok(GaussianWeightVector {
            weights,
            center_bin,
            sigma_bins,
        })
    }

    /// Centered at `B/2` with `sigma = B/6`.
    pub fn centered(bins: usize) -> Self {
        Self::new(bins, bins as f64 / 2.0, bins as f64 / 6.0).expect("bins > 0")
    }

    /// All-ones weights, turning the weighted entropy back into plain Shannon entropy.
    pub fn uniform(bins: usize) -> Self {
        GaussianWeightVector {
            weights: vec![1.0; bins],
            center_bin: bins as f64 / 2.0,
            sigma_bins: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Shannon entropy in bits, `0 log 0 = 0`. Empty histograms have zero entropy.
pub fn image_entropy(p: &ProbabilityVector) -> f64 {
    if p.empty {
        return 0.0;
    }
    let mut acc = 0.0;
    for &pi in &p.bins {
        if pi > 0.0 {
            acc += pi * pi.log2();
        }
    }
    -acc
}

/// Gaussian-weighted entropy `-sum (w_i p_i) log2 p_i`.
///
/// Uses the same summation order as [`image_entropy`], so unit weights reproduce it bit for bit.
pub fn region_entropy(p: &ProbabilityVector, w: &GaussianWeightVector) -> Result<f64> {
    if p.bins.len() != w.weights.len() {
        return Err(VioError::invalid(format!(
            "histogram has {} bins but weight vector has {}",
            p.bins.len(),
            w.weights.len()
        )));
    }
    if p.empty {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (&pi, &wi) in p.bins.iter().zip(&w.weights) {
        if pi > 0.0 {
            acc += (wi * pi) * pi.log2();
        }
    }
    Ok(-acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionStatus {
    /// Above the mean for the last `K` frames: features may be selected here.
    Candidate,
    /// Above the mean now, but not consistently over the temporal window.
    RejectedTemporal,
    BelowMean,
}

#[derive(Debug, Clone)]
pub struct RegionEntropyMap {
    pub grid: RegionGrid,
    pub entropies: Vec<f64>,
    pub mean_entropy: f64,
    pub status: Vec<RegionStatus>,
    /// Newest entry at the back; at most `window` entries per region.
    pub history: Vec<VecDeque<bool>>,
    pub window: usize,
}

impl RegionEntropyMap {
    pub fn candidate_count(&self) -> usize {
        self.status
            .iter()
            .filter(|s| **s == RegionStatus::Candidate)
            .count()
    }

    pub fn above_mean_count(&self) -> usize {
        self.status
            .iter()
            .filter(|s| **s != RegionStatus::BelowMean)
            .count()
    }

    /// Map that accepts every pixel, used when masking is disabled.
    pub fn accept_all(grid: RegionGrid) -> Self {
        let n = grid.len();
        RegionEntropyMap {
            grid,
            entropies: vec![0.0; n],
            mean_entropy: 0.0,
            status: vec![RegionStatus::Candidate; n],
            history: vec![VecDeque::new(); n],
            window: 1,
        }
    }
}

/// Computes region entropies for one frame and advances the temporal gate.
///
/// `prior` is the previous map of the same stream; pass `None` for the first frame.
pub fn build_mask(
    gradient: &GradientImage,
    grid: &RegionGrid,
    w: &GaussianWeightVector,
    prior: Option<&RegionEntropyMap>,
    window: usize,
) -> Result<RegionEntropyMap> {
    if gradient.width != grid.width || gradient.height != grid.height {
        return Err(VioError::invalid(format!(
            "gradient is {}x{} but grid covers {}x{}",
            gradient.width, gradient.height, grid.width, grid.height
        )));
    }
    if window == 0 {
        return Err(VioError::invalid(
            "temporal window must be at least one frame",
        ));
    }
    if let Some(prior) = prior {
        if prior.grid != *grid {
            return Err(VioError::invalid(
                "prior mask was built on a different grid",
            ));
        }
    }
    let edges = gradient_edges(w.len());
    let entropies = grid
        .region_rects
        .iter()
        .map(|rect| region_entropy(&histogram_rect(gradient, rect, &edges), w))
        .collect::<Result<Vec<f64>>>()?;
    let mean_entropy = entropies.iter().sum::<f64>() / entropies.len() as f64;

    let mut history = match prior {
        Some(p) => p.history.clone(),
        None => vec![VecDeque::with_capacity(window); grid.len()],
    };
    let status = entropies
        .iter()
        .zip(history.iter_mut())
        .map(|(&e, h)| {
            let above = e > mean_entropy;
            h.push_back(above);
            while h.len() > window {
                h.pop_front();
            }
            if !above {
                RegionStatus::BelowMean
            } else if h.iter().all(|&b| b) {
                RegionStatus::Candidate
            } else {
                RegionStatus::RejectedTemporal
            }
        })
        .collect();

    Ok(RegionEntropyMap {
        grid: grid.clone(),
        entropies,
        mean_entropy,
        status,
        history,
        window,
    })
}

/// True iff the region enclosing `(x, y)` is a candidate.
pub fn mask_lookup(map: &RegionEntropyMap, x: f64, y: f64) -> Result<bool> {
    if !(x >= 0.0 && y >= 0.0 && x < map.grid.width as f64 && y < map.grid.height as f64) {
        return Err(VioError::invalid(format!(
            "pixel ({x}, {y}) outside {}x{}",
            map.grid.width, map.grid.height
        )));
    }
    let idx = map.grid.region_of(x as usize, y as usize);
    Ok(map.status[idx] == RegionStatus::Candidate)
}

/// Renders region outlines (green candidate, red temporally rejected, gray below mean) and
/// tracked feature crosses over the frame.
pub fn mask_overlay(frame: &Frame, map: &RegionEntropyMap, features: &[(f64, f64)]) -> RgbImage {
    let (w, h) = (frame.width(), frame.height());
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = frame.get(x as usize, y as usize);
        Rgb([v, v, v])
    });
    let mut put = |x: usize, y: usize, c: Rgb<u8>| {
        if x < w && y < h {
            img.put_pixel(x as u32, y as u32, c);
        }
    };
    // Gray first so colored outlines win on shared edges.
    let order = [
        RegionStatus::BelowMean,
        RegionStatus::RejectedTemporal,
        RegionStatus::Candidate,
    ];
    for wanted in order {
        let color = match wanted {
            RegionStatus::Candidate => Rgb([0, 220, 0]),
            RegionStatus::RejectedTemporal => Rgb([230, 0, 0]),
            RegionStatus::BelowMean => Rgb([110, 110, 110]),
        };
        for (rect, status) in map.grid.region_rects.iter().zip(&map.status) {
            if *status != wanted {
                continue;
            }
            let (x1, y1) = (rect.x + rect.width - 1, rect.y + rect.height - 1);
            for x in rect.x..=x1 {
                put(x, rect.y, color);
                put(x, y1, color);
            }
            for y in rect.y..=y1 {
                put(rect.x, y, color);
                put(x1, y, color);
            }
        }
    }
    for &(fx, fy) in features {
        let (cx, cy) = (fx.round() as i64, fy.round() as i64);
        for d in -2i64..=2 {
            for (x, y) in [(cx + d, cy), (cx, cy + d)] {
                if x >= 0 && y >= 0 {
                    put(x as usize, y as usize, Rgb([255, 220, 0]));
                }
            }
        }
    }
    img
}

pub fn write_mask_overlay(
    path: &Path,
    frame: &Frame,
    map: &RegionEntropyMap,
    features: &[(f64, f64)],
) -> Result<()> {
    mask_overlay(frame, map, features)
        .save(path)
        .map_err(|source| VioError::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{compute_gradient, Spectrum};
    use proptest::prelude::*;

    fn pv(bins: Vec<f64>) -> ProbabilityVector {
        ProbabilityVector::from_probabilities(bins).unwrap()
    }

    #[test]
    fn entropy_reference_values() {
        let mut delta = vec![0.0; 64];
        delta[7] = 1.0;
        assert_eq!(image_entropy(&pv(delta)), 0.0);
        assert_eq!(image_entropy(&pv(vec![1.0 / 64.0; 64])), 6.0);
        let mut two = vec![0.0; 64];
        two[0] = 0.5;
        two[1] = 0.5;
        assert_eq!(image_entropy(&pv(two)), 1.0);
        assert_eq!(image_entropy(&pv(vec![0.0; 64])), 0.0);
    }

    #[test]
    fn weighted_entropy_reference_values() {
        let mut two = vec![0.0; 64];
        two[0] = 0.5;
        two[1] = 0.5;
        let mut w = vec![0.0; 64];
        w[0] = 1.0;
        let w = GaussianWeightVector {
            weights: w,
            center_bin: 0.0,
            sigma_bins: 1.0,
        };
        assert_eq!(region_entropy(&pv(two), &w).unwrap(), 0.5);

        // Frozen from an independent term-by-term summation: (6/64) * sum_k exp(-(k-32)^2/128).
        let gauss = GaussianWeightVector::new(64, 32.0, 8.0).unwrap();
        let e = region_entropy(&pv(vec![1.0 / 64.0; 64]), &gauss).unwrap();
        assert!((e - 1.879_849_511_970_414_4).abs() < 1e-12, "{e}");
    }

    #[test]
    fn weight_length_mismatch_is_rejected() {
        let w = GaussianWeightVector::centered(32);
        assert!(region_entropy(&pv(vec![1.0 / 64.0; 64]), &w).is_err());
    }

    #[test]
    fn gaussian_weights_peak_at_one() {
        let w = GaussianWeightVector::centered(64);
        assert_eq!(w.center_bin, 32.0);
        assert!((w.sigma_bins - 64.0 / 6.0).abs() < 1e-15);
        assert_eq!(w.weights[32], 1.0);
        assert!(w.weights.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn grid_tiles_frame_exactly_once() {
        for (w, h, r) in [(640, 512, 8), (101, 37, 4), (9, 9, 3), (50, 20, 7)] {
            let g = RegionGrid::new(w, h, r).unwrap();
            assert_eq!(g.len(), r * r);
            let mut hits = vec![0u8; w * h];
            for rect in &g.region_rects {
                for y in rect.y..rect.y + rect.height {
                    for x in rect.x..rect.x + rect.width {
                        hits[y * w + x] += 1;
                    }
                }
            }
            assert!(hits.iter().all(|&c| c == 1));
            for y in 0..h {
                for x in 0..w {
                    assert!(g.region_rects[g.region_of(x, y)].contains(x, y));
                }
            }
        }
        assert!(RegionGrid::new(4, 4, 5).is_err());
    }

    fn frame_from(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Frame {
        let px = (0..w * h).map(|i| f(i % w, i / w)).collect();
        Frame::new(w, h, px, 0.0, Spectrum::Visual, "cam").unwrap()
    }

    /// Independent path: explicit Sobel loops, linear bin search, direct weighted sum.
    fn oracle_region_entropy(frame: &Frame, rect: &Rect, w: &[f64]) -> f64 {
        let bins = w.len();
        let width = 1448.0 / bins as f64;
        let mut counts = vec![0usize; bins];
        for y in rect.y..rect.y + rect.height {
            for x in rect.x..rect.x + rect.width {
                let m = if x == 0 || y == 0 || x + 1 == frame.width() || y + 1 == frame.height() {
                    0.0
                } else {
                    let g = |dx: i64, dy: i64| {
                        frame.get((x as i64 + dx) as usize, (y as i64 + dy) as usize) as f64
                    };
                    let gx =
                        g(1, -1) + 2.0 * g(1, 0) + g(1, 1) - g(-1, -1) - 2.0 * g(-1, 0) - g(-1, 1);
                    let gy =
                        g(-1, 1) + 2.0 * g(0, 1) + g(1, 1) - g(-1, -1) - 2.0 * g(0, -1) - g(1, -1);
                    (gx * gx + gy * gy).sqrt()
                };
                let mut k = 0;
                while k + 1 < bins && m >= (k + 1) as f64 * width {
                    k += 1;
                }
                counts[k] += 1;
            }
        }
        let n = rect.area() as f64;
        -counts
            .iter()
            .zip(w)
            .filter(|(c, _)| **c > 0)
            .map(|(&c, &wk)| {
                let p = c as f64 / n;
                wk * p * p.log2()
            })
            .sum::<f64>()
    }

    /// 20x20 frame: top-left 10x10 region carries a block pattern, the rest is flat.
    fn textured_corner_frame() -> Frame {
        frame_from(20, 20, |x, y| {
            if x < 10 && y < 10 {
                (((x / 2 + y / 3) % 3) * 90) as u8
            } else {
                60
            }
        })
    }

    #[test]
    fn single_textured_region_becomes_candidate() {
        let frame = textured_corner_frame();
        let grid = RegionGrid::new(20, 20, 2).unwrap();
        let w = GaussianWeightVector::centered(64);
        let grad = compute_gradient(&frame).unwrap();
        let mut map: Option<RegionEntropyMap> = None;
        for _ in 0..3 {
            map = Some(build_mask(&grad, &grid, &w, map.as_ref(), 3).unwrap());
        }
        let map = map.unwrap();
        let oracle: Vec<f64> = grid
            .region_rects
            .iter()
            .map(|r| oracle_region_entropy(&frame, r, &w.weights))
            .collect();
        for (e, o) in map.entropies.iter().zip(&oracle) {
            assert!((e - o).abs() < 1e-12, "{e} vs {o}");
        }
        // Pixels next to the texture also see gradients, so only the hand-built order matters.
        assert!(oracle[0] > oracle.iter().sum::<f64>() / 4.0);
        assert_eq!(map.status[0], RegionStatus::Candidate);
        for i in 1..4 {
            if oracle[i] <= map.mean_entropy {
                assert_eq!(map.status[i], RegionStatus::BelowMean);
            }
        }
        assert!(mask_lookup(&map, 3.0, 4.0).unwrap());
        assert!(!mask_lookup(&map, 15.0, 15.0).unwrap());
        assert!(mask_lookup(&map, 20.0, 1.0).is_err());
    }

    #[test]
    fn flat_frame_gives_no_candidates() {
        let flat = Frame::constant(24, 24, 90, 0.0, Spectrum::Visual).unwrap();
        let grid = RegionGrid::new(24, 24, 2).unwrap();
        let map = build_mask(
            &compute_gradient(&flat).unwrap(),
            &grid,
            &GaussianWeightVector::centered(64),
            None,
            3,
        )
        .unwrap();
        assert!(map.entropies.iter().all(|&e| e == map.mean_entropy));
        assert_eq!(map.candidate_count(), 0);
    }

    #[test]
    fn equal_textured_regions_tie_to_zero_candidates() {
        // Every region sees the same gradient histogram, borders included.
        let grid = RegionGrid::new(16, 16, 2).unwrap();
        let mut magnitude = vec![0.0; 256];
        for y in 0..16 {
            for x in 0..16 {
                magnitude[y * 16 + x] = ((x % 8) * 100 + (y % 8) * 37) as f64;
            }
        }
        let grad = GradientImage {
            width: 16,
            height: 16,
            magnitude,
        };
        let map = build_mask(&grad, &grid, &GaussianWeightVector::centered(64), None, 1).unwrap();
        assert!(map.entropies.iter().all(|&e| e == map.entropies[0]));
        assert_eq!(map.candidate_count(), 0);
        assert_eq!(map.above_mean_count(), 0);
    }

    #[test]
    fn transient_speckle_is_temporally_rejected() {
        // 3x3 grid; region 0 textured throughout, region 4 (center) gets a bright speckle at t=5.
        let (w, h) = (30, 30);
        let base = |x: usize, y: usize| -> u8 {
            if x < 10 && y < 10 {
                (((x / 2 + y / 3) % 3) * 90) as u8
            } else {
                40
            }
        };
        let grid = RegionGrid::new(w, h, 3).unwrap();
        let weights = GaussianWeightVector::centered(64);
        let mut map: Option<RegionEntropyMap> = None;
        for t in 0..8 {
            let frame = frame_from(w, h, |x, y| {
                let speckle = t == 5 && (13..17).contains(&x) && (13..17).contains(&y);
                if speckle {
                    230
                } else {
                    base(x, y)
                }
            });
            let m = build_mask(
                &compute_gradient(&frame).unwrap(),
                &grid,
                &weights,
                map.as_ref(),
                3,
            )
            .unwrap();
            if t == 5 {
                assert_eq!(m.status[4], RegionStatus::RejectedTemporal);
            } else {
                assert_eq!(m.status[4], RegionStatus::BelowMean);
            }
            if t >= 2 {
                assert_eq!(m.status[0], RegionStatus::Candidate);
            }
            assert!(m.history.iter().all(|hh| hh.len() == (t + 1).min(3)));
            map = Some(m);
        }
    }

    #[test]
    fn bootstrap_admits_regions_above_mean_in_all_frames_so_far() {
        let frame = textured_corner_frame();
        let grid = RegionGrid::new(20, 20, 2).unwrap();
        let m = build_mask(
            &compute_gradient(&frame).unwrap(),
            &grid,
            &GaussianWeightVector::centered(64),
            None,
            5,
        )
        .unwrap();
        assert_eq!(m.status[0], RegionStatus::Candidate);
    }

    #[test]
    fn build_mask_rejects_mismatches() {
        let grid = RegionGrid::new(20, 20, 2).unwrap();
        let other = RegionGrid::new(20, 20, 4).unwrap();
        let g = compute_gradient(&textured_corner_frame()).unwrap();
        let w = GaussianWeightVector::centered(64);
        let prior = build_mask(&g, &other, &w, None, 3).unwrap();
        assert!(build_mask(&g, &grid, &w, Some(&prior), 3).is_err());
        let small = RegionGrid::new(10, 20, 2).unwrap();
        assert!(build_mask(&g, &small, &w, None, 3).is_err());
    }

    fn prob_vector() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0u32..1000, 64).prop_map(|counts| {
            let total: u32 = counts.iter().sum::<u32>().max(1);
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        })
    }

    proptest! {
        #[test]
        fn weighted_entropy_bounded(bins in prob_vector()) {
            let p = ProbabilityVector { bins, bin_edges: vec![], empty: false };
            let e = region_entropy(&p, &GaussianWeightVector::centered(64)).unwrap();
            prop_assert!(e >= 0.0);
            prop_assert!(e <= 6.0 + 1e-12);
        }

        #[test]
        fn unit_weights_reproduce_shannon_bitwise(bins in prob_vector()) {
            let p = ProbabilityVector { bins, bin_edges: vec![], empty: false };
            let e = region_entropy(&p, &GaussianWeightVector::uniform(64)).unwrap();
            prop_assert_eq!(e.to_bits(), image_entropy(&p).to_bits());
        }

        #[test]
        fn joint_permutation_leaves_entropy_unchanged(bins in prob_vector(), seed in 0u64..1000) {
            let w = GaussianWeightVector::centered(64);
            let mut idx: Vec<usize> = (0..64).collect();
            // deterministic shuffle
            let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            for i in (1..64).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (s >> 33) as usize % (i + 1));
            }
            let p = ProbabilityVector { bins: bins.clone(), bin_edges: vec![], empty: false };
            let pp = ProbabilityVector { bins: idx.iter().map(|&i| bins[i]).collect(), bin_edges: vec![], empty: false };
            let ww = GaussianWeightVector { weights: idx.iter().map(|&i| w.weights[i]).collect(), ..w.clone() };
            let a = region_entropy(&p, &w).unwrap();
            let b = region_entropy(&pp, &ww).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn candidates_never_exceed_above_mean(pixels in proptest::collection::vec(0u8..=255, 24 * 24), frames in 1usize..5) {
            let grid = RegionGrid::new(24, 24, 3).unwrap();
            let w = GaussianWeightVector::centered(64);
            let mut prior: Option<RegionEntropyMap> = None;
            for t in 0..frames {
                let px: Vec<u8> = pixels.iter().map(|&p| p.wrapping_add((t * 37) as u8)).collect();
                let f = Frame::new(24, 24, px, t as f64, Spectrum::Thermal, "t").unwrap();
                let m = build_mask(&compute_gradient(&f).unwrap(), &grid, &w, prior.as_ref(), 2).unwrap();
                prop_assert!(m.candidate_count() <= m.above_mean_count());
                prop_assert!(m.entropies.iter().all(|&e| e >= 0.0 && e <= 6.0 + 1e-12));
                prior = Some(m);
            }
        }
    }
}
