//! Synthetic visual, thermal and inertial sequences through a textured corridor, with fog,
//! dust and darkness applied to the visual channel.

pub mod scene;
pub mod trajectory;

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::dataset::{
    fmt9, frame_file_name, write_calib, write_ground_truth_csv, write_imu_csv, write_rows,
    GroundTruthRecord, CALIB_FILE, FRAME_INDEX_HEADER,
};
use crate::ekf::ImuSample;
use crate::error::{Result, VioError};
use crate::geometry::gravity;
use crate::imaging::Frame;

pub use scene::{dust_schedule, DustSpeck, WorldConfig};
pub use trajectory::{KinematicState, Trajectory};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG seed for a named stream and index, e.g. pixel noise of one frame.
pub fn stream_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let name = stream.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01B3)
    });
    splitmix64(splitmix64(splitmix64(seed) ^ name) ^ index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DustConfig {
    /// Mean number of new specks per visual frame.
    pub rate: f64,
    pub lifetime_frames: usize,
    pub radius_px: f64,
    pub intensity: f64,
    /// No dust before this time, seconds.
    pub start_time: f64,
    pub fall_px_per_frame: f64,
}

impl Default for DustConfig {
    fn default() -> Self {
        DustConfig {
            rate: 0.0,
            lifetime_frames: 2,
            radius_px: 3.0,
            intensity: 250.0,
            start_time: 1.0,
            fall_px_per_frame: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarknessSegment {
    pub start: f64,
    pub end: f64,
    /// Brightness multiplier in `(0, 1]`.
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimNoiseConfig {
    /// Continuous white-noise densities and bias random walks, as the filter expects them.
    pub accel_noise_density: f64,
    pub gyro_noise_density: f64,
    pub accel_bias_walk: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_init: [f64; 3],
    pub gyro_bias_init: [f64; 3],
    /// Standard deviation of additive pixel noise, gray levels.
    pub pixel_noise_std: f64,
}

impl Default for SimNoiseConfig {
    fn default() -> Self {
        SimNoiseConfig {
            accel_noise_density: 4e-3,
            gyro_noise_density: 3e-4,
            accel_bias_walk: 1e-4,
            gyro_bias_walk: 1e-5,
            accel_bias_init: [0.03, -0.02, 0.025],
            gyro_bias_init: [0.002, -0.001, 0.0015],
            pixel_noise_std: 2.0,
        }
    }
}

impl SimNoiseConfig {
    pub fn zero() -> Self {
        SimNoiseConfig {
            accel_noise_density: 0.0,
            gyro_noise_density: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_init: [0.0; 3],
            gyro_bias_init: [0.0; 3],
            pixel_noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub world: WorldConfig,
    pub trajectory: Trajectory,
    pub duration: f64,
    pub imu_rate: f64,
    pub cam_rate: f64,
    pub width: usize,
    pub height: usize,
    pub fog_beta: f64,
    pub fog_airlight: f64,
    pub dust: DustConfig,
    pub darkness: Vec<DarknessSegment>,
    pub noise: SimNoiseConfig,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            world: WorldConfig::default(),
            trajectory: Trajectory::corridor(20.0),
            duration: 10.0,
            imu_rate: 200.0,
            cam_rate: 20.0,
            width: 320,
            height: 256,
            fog_beta: 0.0,
            fog_airlight: 200.0,
            dust: DustConfig::default(),
            darkness: Vec::new(),
            noise: SimNoiseConfig::default(),
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// 20 m corridor traverse in 10 s without any sensor noise.
    pub fn clean() -> Self {
        ScenarioConfig {
            noise: SimNoiseConfig::zero(),
            ..Default::default()
        }
    }

    /// The clean traverse with default IMU and pixel noise.
    pub fn noisy() -> Self {
        ScenarioConfig::default()
    }

    /// Noisy traverse through a dark stretch with airborne dust.
    pub fn dusty() -> Self {
        ScenarioConfig {
            dust: DustConfig {
                rate: 4.0,
                ..Default::default()
            },
            darkness: vec![DarknessSegment {
                start: 3.0,
                end: 7.0,
                scale: 0.3,
            }],
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VioError::invalid(m.to_string()));
        if !(self.imu_rate > 0.0 && self.cam_rate > 0.0 && self.duration > 0.0) {
            return bad("rates and duration must be positive");
        }
        if !(self.fog_beta >= 0.0) {
            return bad("fog_beta must be non-negative");
        }
        if self.width < 16 || self.height < 16 {
            return bad("image must be at least 16x16");
        }
        if self
            .darkness
            .iter()
            .any(|d| !(d.scale > 0.0 && d.scale <= 1.0) || !(d.end > d.start))
        {
            return bad("darkness segments need start < end and scale in (0, 1]");
        }
        let d = &self.dust;
        if !(d.rate >= 0.0
            && d.radius_px >= 0.0
            && d.start_time.is_finite()
            && d.fall_px_per_frame.is_finite())
        {
            return bad("dust parameters must be finite and non-negative");
        }
        let n = &self.noise;
        if [
            n.accel_noise_density,
            n.gyro_noise_density,
            n.accel_bias_walk,
            n.gyro_bias_walk,
            n.pixel_noise_std,
        ]
        .iter()
        .any(|v| !(*v >= 0.0))
        {
            return bad("noise parameters must be non-negative");
        }
        Ok(())
    }

    pub fn rig(&self) -> CameraRig {
        CameraRig::default_pair(self.width, self.height)
    }

    /// Visual brightness multiplier at time `t`.
    pub fn brightness_at(&self, t: f64) -> f64 {
        self.darkness
            .iter()
            .filter(|d| t >= d.start && t < d.end)
            .map(|d| d.scale)
            .product()
    }

    pub fn frame_times(&self) -> Vec<f64> {
        sample_times(self.duration, self.cam_rate)
    }

    pub fn dust_schedule(&self) -> Vec<DustSpeck> {
        dust_schedule(
            &self.dust,
            &self.frame_times(),
            self.width,
            self.height,
            self.seed,
        )
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthRecord> {
        ground_truth(&self.trajectory, self.duration, self.imu_rate)
    }

    pub fn imu(&self) -> Vec<ImuSample> {
        synthesize_imu(
            &self.trajectory,
            self.duration,
            self.imu_rate,
            &self.noise,
            self.seed,
        )
    }

    /// Renders the visual and thermal frame with index `i`.
    pub fn render_pair(&self, i: usize, dust: &[DustSpeck]) -> (Frame, Frame) {
        let t = i as f64 / self.cam_rate;
        let s = self.trajectory.evaluate(t, self.duration);
        let rig = self.rig();
        let visual =
            scene::render_frame(self, &rig.visual, &s.position, &s.orientation, i, t, dust);
        let thermal =
            scene::render_frame(self, &rig.thermal, &s.position, &s.orientation, i, t, dust);
        (visual, thermal)
    }

    /// Renders every frame pair, in parallel.
    pub fn render_all(&self) -> Vec<(Frame, Frame)> {
        let dust = self.dust_schedule();
        let n = self.frame_times().len();
        (0..n)
            .into_par_iter()
            .map(|i| self.render_pair(i, &dust))
            .collect()
    }
}

/// `0, 1/rate, …` up to and including `duration` when it falls on the grid.
pub fn sample_times(duration: f64, rate: f64) -> Vec<f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 / rate).collect()
}

pub fn ground_truth(trajectory: &Trajectory, duration: f64, rate: f64) -> Vec<GroundTruthRecord> {
    sample_times(duration, rate)
        .into_iter()
        .map(|t| {
            let s = trajectory.evaluate(t, duration);
            GroundTruthRecord {
                timestamp: t,
                position: s.position,
                orientation: s.orientation,
                velocity: s.velocity,
            }
        })
        .collect()
}

/// Body-frame specific force and angular rate with white noise and random-walk biases.
pub fn synthesize_imu(
    trajectory: &Trajectory,
    duration: f64,
    rate: f64,
    noise: &SimNoiseConfig,
    seed: u64,
) -> Vec<ImuSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "imu", 0));
    let mut gauss = || {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        Vector3::from(v)
    };
    let dt = 1.0 / rate;
    let (sa, sg) = (
        noise.accel_noise_density * rate.sqrt(),
        noise.gyro_noise_density * rate.sqrt(),
    );
    let (wa, wg) = (
        noise.accel_bias_walk * dt.sqrt(),
        noise.gyro_bias_walk * dt.sqrt(),
    );
    let mut b_f = Vector3::from(noise.accel_bias_init);
    let mut b_w = Vector3::from(noise.gyro_bias_init);
    sample_times(duration, rate)
        .into_iter()
        .map(|t| {
            let s = trajectory.evaluate(t, duration);
            let f = s.orientation.inverse() * (s.acceleration - gravity()) + b_f + gauss() * sa;
            let w = s.omega_body + b_w + gauss() * sg;
            b_f += gauss() * wa;
            b_w += gauss() * wg;
            ImuSample::new(t, f, w)
        })
        .collect()
}

/// Writes the full dataset, plus `dust.csv` and `scenario.toml` describing how it was made.
pub fn render_sequence(config: &ScenarioConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    for sub in ["visual", "thermal"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| VioError::io(&d, e))?;
    }
    let frames = config.render_all();
    for (i, (visual, thermal)) in frames.iter().enumerate() {
        visual.save(&out_dir.join("visual").join(frame_file_name(i)))?;
        thermal.save(&out_dir.join("thermal").join(frame_file_name(i)))?;
    }
    let times: Vec<(usize, f64)> = config.frame_times().into_iter().enumerate().collect();
    for name in ["visual.csv", "thermal.csv"] {
        write_rows(&out_dir.join(name), FRAME_INDEX_HEADER, &times, |(i, t)| {
            vec![i.to_string(), fmt9(*t)]
        })?;
    }
    write_imu_csv(&out_dir.join("imu.csv"), &config.imu())?;
    write_ground_truth_csv(&out_dir.join("ground_truth.csv"), &config.ground_truth())?;
    write_calib(&out_dir.join(CALIB_FILE), &config.rig())?;
    write_rows(
        &out_dir.join("dust.csv"),
        "birth_frame,lifetime_frames,x,y,radius_px,fall_px_per_frame,intensity",
        &config.dust_schedule(),
        |s| {
            vec![
                s.birth_frame.to_string(),
                s.lifetime.to_string(),
                fmt9(s.x),
                fmt9(s.y),
                fmt9(s.radius),
                fmt9(s.fall_px),
                fmt9(s.intensity),
            ]
        },
    )?;
    let p = out_dir.join("scenario.toml");
    std::fs::write(&p, config.to_toml()).map_err(|e| VioError::io(&p, e))
}
