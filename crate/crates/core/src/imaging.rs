//! Frames, Sobel gradients and gradient-magnitude histograms.

use std::path::Path;

use image::{ColorType, GrayImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VioError};

/// Largest Sobel magnitude on 8-bit input is `4 * 255 * sqrt(2) ~= 1442.5`.
pub const GRADIENT_RANGE_MAX: f64 = 1448.0;
pub const DEFAULT_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spectrum {
    Visual,
    Thermal,
}

impl Spectrum {
    pub const ALL: [Spectrum; 2] = [Spectrum::Visual, Spectrum::Thermal];

    pub fn name(self) -> &'static str {
        match self {
            Spectrum::Visual => "visual",
            Spectrum::Thermal => "thermal",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Spectrum::Visual => 0,
            Spectrum::Thermal => 1,
        }
    }
}

impl std::fmt::Display for Spectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A timestamped 8-bit single-channel image from one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub timestamp: f64,
    pub spectrum: Spectrum,
    pub camera_id: String,
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        timestamp: f64,
        spectrum: Spectrum,
        camera_id: impl Into<String>,
    ) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(VioError::invalid(format!(
                "frame {width}x{height} is smaller than the 3x3 gradient kernel"
            )));
        }
        if pixels.len() != width * height {
            return Err(VioError::invalid(format!(
                "frame has {} pixels, expected {}",
                pixels.len(),
                width * height
            )));
        }
        if !timestamp.is_finite() {
            return Err(VioError::invalid("frame timestamp is not finite"));
        }
        Ok(Frame {
            width,
            height,
            pixels,
            timestamp,
            spectrum,
            camera_id: camera_id.into(),
        })
    }

    /// Frame filled with a single intensity.
    pub fn constant(
        width: usize,
        height: usize,
        value: u8,
        timestamp: f64,
        spectrum: Spectrum,
    ) -> Result<Self> {
        Frame::new(
            width,
            height,
            vec![value; width * height],
            timestamp,
            spectrum,
            spectrum.name(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear intensity lookup. Returns `None` when the 2x2 support leaves the image.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            return None;
        }
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let i = y0 * self.width + x0;
        let p = &self.pixels;
        let top = p[i] as f64 * (1.0 - fx) + p[i + 1] as f64 * fx;
        let bottom = p[i + self.width] as f64 * (1.0 - fx) + p[i + self.width + 1] as f64 * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Loads an 8-bit grayscale PNG or binary PGM (P5).
    pub fn load(
        path: &Path,
        timestamp: f64,
        spectrum: Spectrum,
        camera_id: impl Into<String>,
    ) -> Result<Self> {
        let img = ImageReader::open(path)
            .map_err(|e| VioError::io(path, e))?
            .with_guessed_format()
            .map_err(|e| VioError::io(path, e))?
            .decode()
            .map_err(|source| VioError::Image {
                path: path.to_path_buf(),
                source,
            })?;
        if img.color() != ColorType::L8 {
            return Err(VioError::Ingest {
                file: path.to_path_buf(),
                row: 0,
                message: format!("expected 8-bit single-channel image, got {:?}", img.color()),
            });
        }
        let gray = img.into_luma8();
        let (w, h) = gray.dimensions();
        Frame::new(
            w as usize,
            h as usize,
            gray.into_raw(),
            timestamp,
            spectrum,
            camera_id,
        )
    }

    /// Writes the frame as 8-bit grayscale; the format follows the file extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_gray_image()
            .save(path)
            .map_err(|source| VioError::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("frame dimensions are validated at construction")
    }
}

/// Per-pixel edge strength of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientImage {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f64>,
}

impl GradientImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.magnitude[y * self.width + x]
    }
}

/// Horizontal and vertical 3x3 Sobel responses. The one-pixel border is zero.
pub fn sobel(frame: &Frame) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (frame.width, frame.height);
    let p = &frame.pixels;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 1..h - 1 {
        let up = (y - 1) * w;
        let mid = y * w;
        let down = (y + 1) * w;
        for x in 1..w - 1 {
            let a = p[up + x - 1] as i32;
            let b = p[up + x] as i32;
            let c = p[up + x + 1] as i32;
            let d = p[mid + x - 1] as i32;
            let f = p[mid + x + 1] as i32;
            let g = p[down + x - 1] as i32;
            let hh = p[down + x] as i32;
            let i = p[down + x + 1] as i32;
            gx[mid + x] = ((c + 2 * f + i) - (a + 2 * d + g)) as f64;
            gy[mid + x] = ((g + 2 * hh + i) - (a + 2 * b + c)) as f64;
        }
    }
    (gx, gy)
}

/// Sobel gradient magnitude with a zeroed one-pixel border.
pub fn compute_gradient(frame: &Frame) -> Result<GradientImage> {
    if frame.width < 3 || frame.height < 3 {
        return Err(VioError::invalid("frame smaller than gradient kernel"));
    }
    let (gx, gy) = sobel(frame);
    let magnitude = gx
        .iter()
        .zip(&gy)
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .collect();
    Ok(GradientImage {
        width: frame.width,
        height: frame.height,
        magnitude,
    })
}

/// Normalized histogram. `empty` marks a histogram built from zero samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    pub bins: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub empty: bool,
}

impl ProbabilityVector {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    /// Wraps explicit probabilities over unit-width bins `[0, 1, ..., B]`.
    pub fn from_probabilities(bins: Vec<f64>) -> Result<Self> {
        if bins.is_empty() {
            return Err(VioError::invalid(
                "probability vector needs at least one bin",
            ));
        }
        if bins.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(VioError::invalid(
                "probabilities must be finite and non-negative",
            ));
        }
        let total: f64 = bins.iter().sum();
        let empty = total == 0.0;
        if !empty && (total - 1.0).abs() > 1e-9 {
            return Err(VioError::invalid(format!("probabilities sum to {total}")));
        }
        let bin_edges = (0..=bins.len()).map(|k| k as f64).collect();
        Ok(ProbabilityVector {
            bins,
            bin_edges,
            empty,
        })
    }
}

/// `bins + 1` evenly spaced edges over `[lo, hi]`.
pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let step = (hi - lo) / bins as f64;
    (0..=bins)
        .map(|k| if k == bins { hi } else { lo + step * k as f64 })
        .collect()
}

pub fn gradient_edges(bins: usize) -> Vec<f64> {
    uniform_edges(0.0, GRADIENT_RANGE_MAX, bins)
}

fn check_edges(bin_edges: &[f64]) -> Result<()> {
    if bin_edges.len() < 2 {
        return Err(VioError::invalid("histogram needs at least two bin edges"));
    }
    if bin_edges.iter().any(|e| !e.is_finite()) || bin_edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(VioError::invalid(
            "bin edges must be finite and strictly increasing",
        ));
    }
    Ok(())
}

#[inline]
fn bin_of(v: f64, bin_edges: &[f64]) -> usize {
    let last = bin_edges.len() - 2;
    // First edge strictly greater than v, minus one.
    let k = bin_edges.partition_point(|&e| e <= v);
    k.saturating_sub(1).min(last)
}

/// Normalized histogram of `values`. Values at or beyond the last edge land in the last bin,
/// values below the first edge in the first.
pub fn histogram(values: &[f64], bin_edges: &[f64]) -> Result<ProbabilityVector> {
    check_edges(bin_edges)?;
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(VioError::invalid(format!("non-finite histogram value {v}")));
    }
    let mut counts = vec![0usize; bin_edges.len() - 1];
    for &v in values {
        counts[bin_of(v, bin_edges)] += 1;
    }
    Ok(normalize_counts(&counts, bin_edges))
}

pub(crate) fn normalize_counts(counts: &[usize], bin_edges: &[f64]) -> ProbabilityVector {
    let total: usize = counts.iter().sum();
    let bins = if total == 0 {
        vec![0.0; counts.len()]
    } else {
        let n = total as f64;
        counts.iter().map(|&c| c as f64 / n).collect()
    };
    ProbabilityVector {
        bins,
        bin_edges: bin_edges.to_vec(),
        empty: total == 0,
    }
}

/// Histogram of the gradient magnitudes inside `rect` without copying them out.
pub(crate) fn histogram_rect(
    gradient: &GradientImage,
    rect: &Rect,
    bin_edges: &[f64],
) -> ProbabilityVector {
    let mut counts = vec![0usize; bin_edges.len() - 1];
    for y in rect.y..rect.y + rect.height {
        let row = &gradient.magnitude[y * gradient.width + rect.x..][..rect.width];
        for &v in row {
            counts[bin_of(v, bin_edges)] += 1;
        }
    }
    normalize_counts(&counts, bin_edges)
}

/// Axis-aligned pixel rectangle, half-open on the far sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.width && py >= self.y && py < self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}
