//! Run configuration and the single-trial pipeline: mask, detect, align, filter.

pub mod experiment;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{debug, info};
use nalgebra::{DMatrix, Matrix2, UnitQuaternion, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    fmt9, read_numeric_csv, write_rows, Dataset, FrameEntry, GROUND_TRUTH_HEADER,
};
use crate::ekf::{CovarianceHygiene, FilterConfig, FilterState, ImuSample, RobotState};
use crate::entropy::{
    build_mask, write_mask_overlay, GaussianWeightVector, RegionEntropyMap, RegionGrid,
};
use crate::error::{Result, VioError};
use crate::geometry::{landmark_point, quat_from_rpy};
use crate::imaging::{compute_gradient, Frame, Spectrum};
use crate::metrics::{d_optimality, trajectory_error, PoseSample, TrajectoryError};
use crate::sim::stream_seed;
use crate::tracker::{
    align_patch_warped, detect, extract_patch_pyramid, AlignParams, DetectParams, FeatureCandidate,
    ImagePyramid, MatchResult,
};

pub use experiment::{aggregate, run_experiment, ExperimentReport, TrialSummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    /// Regions per image side (R).
    pub grid_r: usize,
    /// Consecutive above-mean frames required (K).
    pub window: usize,
    pub bins: usize,
    pub center_bin: f64,
    pub sigma_bins: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            grid_r: 8,
            window: 3,
            bins: 64,
            center_bin: 32.0,
            sigma_bins: 64.0 / 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub patch_size: usize,
    pub pyramid_levels: usize,
    pub search_floor: f64,
    pub search_cap: f64,
    pub detect: DetectParams,
    pub align: AlignParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            patch_size: 8,
            pyramid_levels: 2,
            search_floor: 6.0,
            search_cap: 25.0,
            detect: DetectParams::default(),
            align: AlignParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    pub mask_enabled: bool,
    pub trials: usize,
    pub seed_base: u64,
    pub debug_masks: bool,
    /// When false, frames are ignored and the filter only integrates the IMU.
    pub vision: bool,
    /// Camera frames are decimated to this rate.
    pub camera_rate: f64,
    /// Static interval averaged for the initial roll and pitch, seconds.
    pub init_duration: f64,
    pub entropy: EntropyConfig,
    pub tracker: TrackerConfig,
    pub filter: FilterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_path: PathBuf::from("dataset"),
            output_dir: PathBuf::from("out"),
            mask_enabled: true,
            trials: 10,
            seed_base: 1,
            debug_masks: false,
            vision: true,
            camera_rate: 20.0,
            init_duration: 0.5,
            entropy: EntropyConfig::default(),
            tracker: TrackerConfig::default(),
            filter: FilterConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VioError::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| VioError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| VioError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.entropy;
        let t = &self.tracker;
        let f = &self.filter;
        let positive = [
            e.center_bin,
            e.sigma_bins,
            t.search_floor,
            t.search_cap,
            t.detect.min_distance,
            t.detect.min_score,
            t.align.residual_threshold,
            t.align.step_tolerance,
            f.sigma_px,
            f.rho_init,
            f.sigma_rho,
            f.chi2_gate,
            f.min_rho,
            self.camera_rate,
            self.init_duration,
        ];
        let counts = [
            e.grid_r,
            e.window,
            e.bins,
            t.patch_size,
            t.pyramid_levels,
            t.detect.max_candidates,
            t.align.max_iterations,
            f.max_landmarks,
            f.miss_limit as usize,
            self.trials,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || counts.contains(&0) {
            return Err(VioError::invalid("all numeric parameters must be positive"));
        }
        if t.search_floor > t.search_cap {
            return Err(VioError::invalid("search_floor exceeds search_cap"));
        }
        Ok(())
    }
}

/// Visual and/or thermal frame sharing one filter update.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub timestamp: f64,
    pub visual: Option<FrameEntry>,
    pub thermal: Option<FrameEntry>,
}

/// Frames of the two streams within this many seconds are processed together.
pub const PAIRING_TOLERANCE: f64 = 0.005;

/// Pairs visual and thermal frames by timestamp, then keeps sets at most `rate` Hz.
pub fn group_frames(visual: &[FrameEntry], thermal: &[FrameEntry], rate: f64) -> Vec<FrameSet> {
    let mut sets: Vec<FrameSet> = Vec::new();
    let mut used = vec![false; thermal.len()];
    for v in visual {
        let i = thermal.partition_point(|t| t.timestamp < v.timestamp - PAIRING_TOLERANCE);
        let pair = (i..thermal.len())
            .take_while(|&j| thermal[j].timestamp <= v.timestamp + PAIRING_TOLERANCE)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| {
                let da = (thermal[a].timestamp - v.timestamp).abs();
                let db = (thermal[b].timestamp - v.timestamp).abs();
                da.total_cmp(&db)
            });
        if let Some(j) = pair {
            used[j] = true;
        }
        sets.push(FrameSet {
            timestamp: v.timestamp,
            visual: Some(v.clone()),
            thermal: pair.map(|j| thermal[j].clone()),
        });
    }
    for (t, _) in thermal.iter().zip(&used).filter(|(_, u)| !**u) {
        sets.push(FrameSet {
            timestamp: t.timestamp,
            visual: None,
            thermal: Some(t.clone()),
        });
    }
    sets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let period = 1.0 / rate;
    let mut out: Vec<FrameSet> = Vec::with_capacity(sets.len());
    for s in sets {
        if out
            .last()
            .is_none_or(|last| s.timestamp >= last.timestamp + period - PAIRING_TOLERANCE)
        {
            out.push(s);
        }
    }
    out
}

/// Roll and pitch from the mean specific force over the first `duration` seconds, yaw zero.
pub fn initial_attitude(imu: &[ImuSample], duration: f64) -> Result<UnitQuaternion<f64>> {
    let t0 = imu
        .first()
        .ok_or_else(|| VioError::invalid("no IMU samples"))?
        .timestamp;
    let window: Vec<&ImuSample> = imu
        .iter()
        .take_while(|s| s.timestamp <= t0 + duration)
        .collect();
    let mean = window.iter().map(|s| s.f_hat).sum::<Vector3<f64>>() / window.len() as f64;
    if mean.norm() < 1.0 {
        return Err(VioError::invalid(
            "accelerometer does not sense gravity during initialization",
        ));
    }
    let roll = mean.y.atan2(mean.z);
    let pitch = (-mean.x).atan2((mean.y * mean.y + mean.z * mean.z).sqrt());
    Ok(quat_from_rpy(roll, pitch, 0.0))
}

/// Average of two consecutive samples, applied over the interval between them.
pub fn interval_sample(a: &ImuSample, b: &ImuSample) -> ImuSample {
    ImuSample::new(
        a.timestamp,
        (a.f_hat + b.f_hat) * 0.5,
        (a.omega_hat + b.omega_hat) * 0.5,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRow {
    pub timestamp: f64,
    pub robot: RobotState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub timestamp: f64,
    pub d_optimality: f64,
    pub active_landmarks: usize,
    pub insertions_cumulative: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertionRow {
    pub timestamp: f64,
    /// Frame index within the spectrum's stream.
    pub frame_index: usize,
    pub id: u64,
    pub candidate: FeatureCandidate,
}

/// Worst-case covariance diagnostics over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HygieneSummary {
    pub worst: CovarianceHygiene,
    pub frames_checked: usize,
    pub violations: usize,
}

impl Default for HygieneSummary {
    fn default() -> Self {
        HygieneSummary {
            worst: CovarianceHygiene {
                asymmetry: 0.0,
                min_eig_ratio: f64::INFINITY,
                quat_norm_error: 0.0,
            },
            frames_checked: 0,
            violations: 0,
        }
    }
}

impl HygieneSummary {
    fn record(&mut self, h: CovarianceHygiene) {
        self.frames_checked += 1;
        if !h.holds() {
            self.violations += 1;
        }
        self.worst.asymmetry = self.worst.asymmetry.max(h.asymmetry);
        self.worst.min_eig_ratio = self.worst.min_eig_ratio.min(h.min_eig_ratio);
        self.worst.quat_norm_error = self.worst.quat_norm_error.max(h.quat_norm_error);
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trial_seed: u64,
    pub mask_enabled: bool,
    pub poses: Vec<PoseRow>,
    pub metrics: Vec<MetricsRow>,
    pub insertions: Vec<InsertionRow>,
    pub hygiene: HygieneSummary,
    /// Present when the dataset has ground truth.
    pub trajectory_error: Option<TrajectoryError>,
    pub frames_processed: usize,
}

impl RunOutput {
    pub fn insertions_total(&self) -> u64 {
        self.metrics.last().map_or(0, |m| m.insertions_cumulative)
    }

    pub fn terminal_d_optimality(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.d_optimality)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| VioError::io(dir, e))?;
        write_rows(
            &dir.join("pose_estimate.csv"),
            GROUND_TRUTH_HEADER,
            &self.poses,
            |p| {
                let r = &p.robot;
                let q = r.q.quaternion();
                [
                    p.timestamp,
                    r.r.x,
                    r.r.y,
                    r.r.z,
                    q.w,
                    q.i,
                    q.j,
                    q.k,
                    r.v.x,
                    r.v.y,
                    r.v.z,
                ]
                .map(fmt9)
                .to_vec()
            },
        )?;
        write_rows(
            &dir.join("metrics.csv"),
            METRICS_HEADER,
            &self.metrics,
            |m| {
                vec![
                    fmt9(m.timestamp),
                    fmt9(m.d_optimality),
                    m.active_landmarks.to_string(),
                    m.insertions_cumulative.to_string(),
                ]
            },
        )?;
        write_rows(
            &dir.join("insertions.csv"),
            "timestamp_s,frame_index,landmark_id,spectrum,x,y,score,region",
            &self.insertions,
            |i| {
                let c = &i.candidate;
                vec![
                    fmt9(i.timestamp),
                    i.frame_index.to_string(),
                    i.id.to_string(),
                    c.spectrum.name().to_string(),
                    fmt9(c.x),
                    fmt9(c.y),
                    fmt9(c.score),
                    c.region_index.to_string(),
                ]
            },
        )
    }
}

pub const METRICS_HEADER: &str = "timestamp_s,d_optimality,active_landmarks,insertions_cumulative";

/// Reads back the pose and metrics files of a run directory and checks that the cumulative
/// insertion count never decreases. Returns the number of metrics rows.
pub fn verify_run_outputs(dir: &Path) -> Result<usize> {
    read_numeric_csv(&dir.join("pose_estimate.csv"), GROUND_TRUTH_HEADER)?;
    let path = dir.join("metrics.csv");
    let rows = read_numeric_csv(&path, METRICS_HEADER)?;
    if let Some(i) = rows.windows(2).position(|w| w[1][3] < w[0][3]) {
        return Err(VioError::Ingest {
            file: path,
            row: i + 3,
            message: "insertions_cumulative decreased".into(),
        });
    }
    Ok(rows.len())
}

/// Per-spectrum frontend state carried between frames.
struct Stream {
    spectrum: Spectrum,
    grid: Option<RegionGrid>,
    mask: Option<RegionEntropyMap>,
}

struct Prepared {
    frame: Frame,
    index: usize,
    pyramid: ImagePyramid,
    mask: RegionEntropyMap,
}

/// Camera pose, estimated at insertion, from which a landmark's patch was cut.
#[derive(Debug, Clone, Copy)]
struct ReferenceView {
    /// Camera to world.
    rotation: UnitQuaternion<f64>,
    center: Vector3<f64>,
}

fn camera_pose(filter: &FilterState, spectrum: Spectrum) -> ReferenceView {
    let ext = filter.rig.get(spectrum).extrinsics;
    let rb = &filter.robot;
    ReferenceView {
        rotation: rb.q * ext.rotation,
        center: rb.r + rb.q * ext.translation,
    }
}

/// Affine map from reference-patch offsets to current-image offsets, treating the patch as a
/// plane facing the reference camera at the landmark's estimated depth.
fn predicted_warp(
    filter: &FilterState,
    slot: usize,
    reference: &ReferenceView,
) -> Option<Matrix2<f64>> {
    let lm = filter.landmark(slot)?;
    let intr = filter.rig.get(lm.spectrum).intrinsics;
    let current = camera_pose(filter, lm.spectrum);
    let (p_c, _) = landmark_point(lm.alpha, lm.beta, lm.rho);
    let x = current.center + current.rotation * p_c;
    let normal = (reference.center - x).try_normalize(1e-9)?;
    let u_ref = intr.project(&(reference.rotation.inverse() * (x - reference.center)))?;
    let through = |du: Vector2<f64>| -> Option<Vector2<f64>> {
        let n = intr.unproject(u_ref.x + du.x, u_ref.y + du.y);
        let d = reference.rotation * Vector3::new(n.x, n.y, 1.0);
        let t = normal.dot(&(x - reference.center)) / normal.dot(&d);
        if !(t > 0.0) {
            return None;
        }
        let y = reference.center + d * t;
        intr.project(&(current.rotation.inverse() * (y - current.center)))
    };
    let h = 0.5;
    let mut warp = Matrix2::zeros();
    for (c, e) in [Vector2::x(), Vector2::y()].into_iter().enumerate() {
        let col = (through(e * h)? - through(-e * h)?) / (2.0 * h);
        warp.set_column(c, &col);
    }
    let det = warp.determinant();
    (det.is_finite() && det > 0.05).then_some(warp)
}

struct Pipeline<'a> {
    config: &'a RunConfig,
    references: HashMap<u64, ReferenceView>,
    weights: GaussianWeightVector,
    streams: [Stream; 2],
    jitter: ChaCha8Rng,
    debug_dir: Option<PathBuf>,
}

impl Pipeline<'_> {
    fn prepare(&mut self, entry: &FrameEntry) -> Result<Prepared> {
        let cfg = self.config;
        let frame = entry.load()?;
        let stream = &mut self.streams[entry.spectrum.index()];
        let grid = match &stream.grid {
            Some(g) if g.width == frame.width() && g.height == frame.height() => g.clone(),
            _ => {
                let g = RegionGrid::new(frame.width(), frame.height(), cfg.entropy.grid_r)?;
                stream.grid = Some(g.clone());
                stream.mask = None;
                g
            }
        };
        let mask = if cfg.mask_enabled {
            let grad = compute_gradient(&frame)?;
            let m = build_mask(
                &grad,
                &grid,
                &self.weights,
                stream.mask.as_ref(),
                cfg.entropy.window,
            )?;
            stream.mask = Some(m.clone());
            m
        } else {
            RegionEntropyMap::accept_all(grid)
        };
        let pyramid = ImagePyramid::new(&frame, cfg.tracker.pyramid_levels);
        Ok(Prepared {
            frame,
            index: entry.index,
            pyramid,
            mask,
        })
    }

    fn track(&self, filter: &mut FilterState, frames: &[Option<Prepared>; 2]) -> Result<()> {
        let t = &self.config.tracker;
        let mut matches: Vec<(usize, MatchResult)> = Vec::new();
        for slot in filter.active_slots() {
            let spectrum = filter.landmark(slot).expect("active").spectrum;
            let Some(prep) = &frames[spectrum.index()] else {
                continue;
            };
            let pred = match filter.predict_pixel(slot) {
                Ok(p) => p,
                Err(VioError::OutOfView) => {
                    filter.landmark_mut(slot).unwrap().out_of_view = true;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let radius = pred.search_radius(t.search_floor, t.search_cap);
            let lm = filter.landmark(slot).unwrap();
            let warp = self
                .references
                .get(&lm.id)
                .and_then(|r| predicted_warp(filter, slot, r))
                .unwrap_or_else(Matrix2::identity);
            match align_patch_warped(
                &prep.pyramid,
                &lm.patch,
                pred.pixel,
                &warp,
                radius,
                &t.align,
            ) {
                Ok(m) => matches.push((slot, m)),
                Err(VioError::OutOfView) => filter.landmark_mut(slot).unwrap().out_of_view = true,
                Err(e) => return Err(e),
            }
        }
        let outcome = filter.update(&matches)?;
        debug!(
            "applied {} gated {} skipped {}",
            outcome.applied.len(),
            outcome.gated.len(),
            outcome.skipped.len()
        );
        Ok(())
    }

    fn replenish(
        &mut self,
        filter: &mut FilterState,
        frames: &[Option<Prepared>; 2],
        timestamp: f64,
        insertions: &mut Vec<InsertionRow>,
    ) -> Result<()> {
        let t = self.config.tracker;
        // Landmarks about to be dropped no longer occupy their neighbourhood.
        let limit = filter.config.miss_limit;
        let mut candidates: [Vec<FeatureCandidate>; 2] = [Vec::new(), Vec::new()];
        for spectrum in [Spectrum::Visual, Spectrum::Thermal] {
            let Some(prep) = &frames[spectrum.index()] else {
                continue;
            };
            let occupied: Vec<(f64, f64)> = filter
                .active_slots()
                .into_iter()
                .filter_map(|s| filter.landmark(s))
                .filter(|lm| {
                    lm.spectrum == spectrum && !lm.out_of_view && lm.consecutive_misses < limit
                })
                .map(|lm| (lm.last_pixel.x, lm.last_pixel.y))
                .collect();
            candidates[spectrum.index()] = detect(
                &prep.frame,
                &prep.mask,
                &occupied,
                &t.detect,
                Some(&mut self.jitter),
            )?;
        }
        let report = filter.manage_landmarks(&candidates[0], &candidates[1], |c| {
            let prep = frames[c.spectrum.index()].as_ref()?;
            extract_patch_pyramid(&prep.pyramid, c.x, c.y, t.patch_size, t.pyramid_levels)
        });
        for id in &report.dropped {
            self.references.remove(id);
        }
        for (slot, c) in report.inserted {
            let lm = filter.landmark(slot).expect("just inserted");
            self.references
                .insert(lm.id, camera_pose(filter, c.spectrum));
            insertions.push(InsertionRow {
                timestamp,
                frame_index: frames[c.spectrum.index()].as_ref().map_or(0, |p| p.index),
                id: lm.id,
                candidate: c,
            });
        }
        Ok(())
    }

    fn write_debug(&self, filter: &FilterState, frames: &[Option<Prepared>; 2]) -> Result<()> {
        let Some(dir) = &self.debug_dir else {
            return Ok(());
        };
        for prep in frames.iter().flatten() {
            let spectrum = prep.frame.spectrum;
            let features: Vec<(f64, f64)> = filter
                .active_slots()
                .into_iter()
                .filter_map(|s| filter.landmark(s))
                .filter(|lm| lm.spectrum == spectrum)
                .map(|lm| (lm.last_pixel.x, lm.last_pixel.y))
                .collect();
            let path = dir.join(format!("{}_{:06}.png", spectrum.name(), prep.index));
            write_mask_overlay(&path, &prep.frame, &prep.mask, &features)?;
        }
        Ok(())
    }
}

fn pose_samples(rows: &[PoseRow]) -> Vec<PoseSample> {
    rows.iter()
        .map(|p| PoseSample {
            timestamp: p.timestamp,
            position: p.robot.r,
            orientation: p.robot.q,
        })
        .collect()
}

/// Runs one trial over an opened dataset. Mask overlays go to `debug_dir` when given.
pub fn run_trial(
    config: &RunConfig,
    dataset: &Dataset,
    trial_seed: u64,
    debug_dir: Option<&Path>,
) -> Result<RunOutput> {
    config.validate()?;
    let imu = &dataset.imu;
    let q0 = initial_attitude(imu, config.init_duration)?;
    let mut filter = FilterState::new(RobotState::at_rest(q0), dataset.rig.clone(), config.filter);
    if let Some(dir) = debug_dir {
        std::fs::create_dir_all(dir).map_err(|e| VioError::io(dir, e))?;
    }
    let e = &config.entropy;
    let mut pipeline = Pipeline {
        config,
        references: HashMap::new(),
        weights: GaussianWeightVector::new(e.bins, e.center_bin, e.sigma_bins)?,
        streams: [Spectrum::Visual, Spectrum::Thermal].map(|spectrum| Stream {
            spectrum,
            grid: None,
            mask: None,
        }),
        jitter: ChaCha8Rng::seed_from_u64(stream_seed(trial_seed, "detector-jitter", 0)),
        debug_dir: debug_dir.map(Path::to_path_buf),
    };
    debug_assert!(pipeline
        .streams
        .iter()
        .enumerate()
        .all(|(i, s)| s.spectrum.index() == i));

    let frame_sets = if config.vision {
        group_frames(&dataset.visual, &dataset.thermal, config.camera_rate)
    } else {
        Vec::new()
    };
    let mut poses = vec![PoseRow {
        timestamp: imu[0].timestamp,
        robot: filter.robot,
    }];
    let mut metrics = Vec::with_capacity(frame_sets.len());
    let mut insertions = Vec::new();
    let mut hygiene = HygieneSummary::default();
    let mut k = 0;
    let mut next_set = frame_sets
        .iter()
        .position(|s| s.timestamp >= imu[0].timestamp - PAIRING_TOLERANCE)
        .unwrap_or(frame_sets.len());

    loop {
        // Frames are processed at the IMU sample nearest to their timestamp.
        while next_set < frame_sets.len() {
            let set = &frame_sets[next_set];
            let here = (imu[k].timestamp - set.timestamp).abs();
            let closer_ahead = imu
                .get(k + 1)
                .is_some_and(|n| (n.timestamp - set.timestamp).abs() < here);
            if closer_ahead {
                break;
            }
            let frames = [set.visual.as_ref(), set.thermal.as_ref()]
                .map(|f| f.map(|entry| pipeline.prepare(entry)).transpose());
            let [v, t] = frames;
            let frames = [v?, t?];
            pipeline.track(&mut filter, &frames)?;
            pipeline.replenish(&mut filter, &frames, set.timestamp, &mut insertions)?;
            pipeline.write_debug(&filter, &frames)?;
            let pose_cov = DMatrix::from_column_slice(6, 6, filter.pose_covariance().as_slice());
            metrics.push(MetricsRow {
                timestamp: set.timestamp,
                d_optimality: d_optimality(&pose_cov)?,
                active_landmarks: filter.active_count(),
                insertions_cumulative: filter.insertion_counter,
            });
            hygiene.record(filter.hygiene());
            next_set += 1;
        }
        if k + 1 >= imu.len() {
            break;
        }
        let dt = imu[k + 1].timestamp - imu[k].timestamp;
        filter.propagate(&interval_sample(&imu[k], &imu[k + 1]), dt)?;
        k += 1;
        poses.push(PoseRow {
            timestamp: imu[k].timestamp,
            robot: filter.robot,
        });
    }
    if frame_sets.is_empty() {
        hygiene.record(filter.hygiene());
    }

    let trajectory_error = if dataset.ground_truth.is_empty() {
        None
    } else {
        let truth: Vec<PoseSample> = dataset
            .ground_truth
            .iter()
            .map(|g| PoseSample {
                timestamp: g.timestamp,
                position: g.position,
                orientation: g.orientation,
            })
            .collect();
        Some(trajectory_error(&pose_samples(&poses), &truth)?)
    };
    info!(
        "trial {trial_seed} mask {}: {} frames, {} insertions, final error {:?}",
        config.mask_enabled,
        metrics.len(),
        filter.insertion_counter,
        trajectory_error.map(|e| e.final_position_error)
    );
    Ok(RunOutput {
        trial_seed,
        mask_enabled: config.mask_enabled,
        poses,
        frames_processed: metrics.len(),
        metrics,
        insertions,
        hygiene,
        trajectory_error,
    })
}

/// Opens `config.dataset_path`, runs one trial and writes its CSVs (and mask overlays when
/// requested) into `config.output_dir`, together with the effective configuration.
pub fn run_once(config: &RunConfig, trial_seed: u64) -> Result<RunOutput> {
    let dataset = Dataset::open(&config.dataset_path)?;
    let out = &config.output_dir;
    let debug = config.debug_masks.then(|| out.join("masks"));
    let result = run_trial(config, &dataset, trial_seed, debug.as_deref())?;
    result.write(out)?;
    verify_run_outputs(out)?;
    let p = out.join("config.toml");
    std::fs::write(&p, config.to_toml()).map_err(|e| VioError::io(&p, e))?;
    Ok(result)
}
