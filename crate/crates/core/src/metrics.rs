//! D-optimality, one-way ANOVA, trajectory error and boxplot summaries.

use nalgebra::{DMatrix, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Result, VioError};
use crate::geometry::yaw_of;

/// `det(Σ)^(1/l)` through a Cholesky log-determinant.
pub fn d_optimality(cov: &DMatrix<f64>) -> Result<f64> {
    let l = cov.nrows();
    if l == 0 || cov.ncols() != l {
        return Err(VioError::invalid(
            "D-optimality needs a non-empty square matrix",
        ));
    }
    let chol = nalgebra::Cholesky::new(cov.clone()).ok_or_else(|| {
        VioError::DegenerateCovariance("covariance is not positive definite".into())
    })?;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let out = (log_det / l as f64).exp();
    if !out.is_finite() || out <= 0.0 {
        return Err(VioError::DegenerateCovariance(format!(
            "log-determinant {log_det}"
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DOptSeries {
    pub samples: Vec<(f64, f64)>,
}

impl DOptSeries {
    pub fn push(&mut self, timestamp: f64, d_opt: f64) {
        self.samples.push((timestamp, d_opt));
    }

    pub fn terminal(&self) -> Option<f64> {
        self.samples.last().map(|s| s.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnovaResult {
    pub f_statistic: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
    /// Zero within-group variance; the F statistic is 0 or infinite.
    pub degenerate: bool,
}

/// Classic one-way ANOVA over two or more groups of at least two samples each.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(VioError::invalid("ANOVA needs at least two groups"));
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(VioError::invalid(
            "every ANOVA group needs at least two samples",
        ));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(VioError::invalid("ANOVA samples must be finite"));
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let k = groups.len();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (mean - grand).powi(2);
        ssw += g.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    let df_between = k - 1;
    let df_within = n - k;
    // Sums of squares below rounding noise of the data count as zero.
    let scale = groups
        .iter()
        .flatten()
        .map(|v| (v - grand).powi(2))
        .sum::<f64>()
        .max(grand * grand)
        * 1e-24;
    if ssw <= scale {
        let (f, p) = if ssb <= scale {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        };
        return Ok(AnovaResult {
            f_statistic: f,
            df_between,
            df_within,
            p_value: p,
            degenerate: true,
        });
    }
    let f = (ssb / df_between as f64) / (ssw / df_within as f64);
    Ok(AnovaResult {
        f_statistic: f,
        df_between,
        df_within,
        p_value: f_survival(f, df_between as f64, df_within as f64),
        degenerate: false,
    })
}

/// `P(X ≥ x)` for `X ~ F(d1, d2)`.
pub fn f_survival(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x))
}

pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    1.0 - f_survival(x, d1, d2)
}

/// Lanczos approximation (g = 7, nine terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges fast on this side of the mean.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryError {
    pub final_position_error: f64,
    pub rmse: f64,
    pub matched: usize,
}

/// Maximum timestamp gap for pairing estimate and truth samples, seconds.
pub const MATCH_TOLERANCE: f64 = 0.005;

/// Position error after aligning the first matched estimate to truth in yaw and translation.
///
/// Roll and pitch are observable from gravity, so only the four unobservable degrees of
/// freedom are aligned. Truth must be sorted by timestamp.
pub fn trajectory_error(estimate: &[PoseSample], truth: &[PoseSample]) -> Result<TrajectoryError> {
    let pairs: Vec<(&PoseSample, &PoseSample)> = estimate
        .iter()
        .filter_map(|e| nearest(truth, e.timestamp).map(|t| (e, t)))
        .collect();
    let Some(&(e0, t0)) = pairs.first() else {
        return Err(VioError::invalid(
            "estimate and truth do not overlap in time",
        ));
    };
    let yaw = yaw_of(&t0.orientation) - yaw_of(&e0.orientation);
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    let shift = t0.position - rot * e0.position;
    let mut sq = 0.0;
    let mut last = 0.0;
    for (e, t) in &pairs {
        let err = (rot * e.position + shift - t.position).norm();
        sq += err * err;
        last = err;
    }
    Ok(TrajectoryError {
        final_position_error: last,
        rmse: (sq / pairs.len() as f64).sqrt(),
        matched: pairs.len(),
    })
}

fn nearest(truth: &[PoseSample], t: f64) -> Option<&PoseSample> {
    let i = truth.partition_point(|s| s.timestamp < t);
    let mut best: Option<&PoseSample> = None;
    for j in [i.wrapping_sub(1), i] {
        if let Some(s) = truth.get(j) {
            if (s.timestamp - t).abs() <= MATCH_TOLERANCE
                && best.is_none_or(|b| (s.timestamp - t).abs() < (b.timestamp - t).abs())
            {
                best = Some(s);
            }
        }
    }
    best
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxplotStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme samples inside the 1.5·IQR fences.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

pub fn boxplot(samples: &[f64]) -> Result<BoxplotStats> {
    if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
        return Err(VioError::invalid("boxplot needs finite samples"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= lo && *v <= hi).collect();
    Ok(BoxplotStats {
        median: quantile_sorted(&s, 0.5),
        q1,
        q3,
        whisker_low: inside[0],
        whisker_high: *inside.last().unwrap(),
        outliers: s.iter().copied().filter(|v| *v < lo || *v > hi).collect(),
    })
}
