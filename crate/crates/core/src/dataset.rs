//! On-disk dataset layout shared by the simulator and the harness.
//!
//! ```text
//! dataset/
//!   visual/000000.png  thermal/000000.png
//!   visual.csv  thermal.csv      frame_index,timestamp_s
//!   imu.csv                      timestamp_s,fx,fy,fz,wx,wy,wz
//!   ground_truth.csv             timestamp_s,rx,ry,rz,qw,qx,qy,qz,vx,vy,vz
//!   calib.cfg
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraRig, Extrinsics, PinholeModel};
use crate::ekf::ImuSample;
use crate::error::{Result, VioError};
use crate::imaging::{Frame, Spectrum};

pub const IMU_HEADER: &str = "timestamp_s,fx,fy,fz,wx,wy,wz";
pub const GROUND_TRUTH_HEADER: &str = "timestamp_s,rx,ry,rz,qw,qx,qy,qz,vx,vy,vz";
pub const FRAME_INDEX_HEADER: &str = "frame_index,timestamp_s";
pub const CALIB_FILE: &str = "calib.cfg";

/// Formats with 9 significant digits, switching to exponent form for very small or large
/// magnitudes.
pub fn fmt9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 {
            "0".to_string()
        } else {
            x.to_string()
        };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{exp}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthRecord {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
}

/// One camera section of `calib.cfg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraCalib {
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
    /// Camera orientation in the body frame, `[w, x, y, z]`.
    pub q_body_camera: [f64; 4],
    /// Camera position in the body frame, meters.
    pub p_body_camera: [f64; 3],
}

impl CameraCalib {
    fn from_camera(c: &Camera) -> Self {
        let i = &c.intrinsics;
        let q = c.extrinsics.rotation.quaternion();
        let t = c.extrinsics.translation;
        CameraCalib {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
            k1: i.k1,
            k2: i.k2,
            q_body_camera: [q.w, q.i, q.j, q.k],
            p_body_camera: [t.x, t.y, t.z],
        }
    }

    fn to_camera(self, spectrum: Spectrum) -> std::result::Result<Camera, String> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width < 2 || self.height < 2 {
            return Err(format!(
                "{spectrum}: focal lengths and image size must be positive"
            ));
        }
        let [w, x, y, z] = self.q_body_camera;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.5) {
            return Err(format!("{spectrum}: q_body_camera is not a rotation"));
        }
        let mut intrinsics =
            PinholeModel::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height);
        intrinsics.k1 = self.k1;
        intrinsics.k2 = self.k2;
        Ok(Camera {
            spectrum,
            intrinsics,
            extrinsics: Extrinsics {
                rotation: UnitQuaternion::from_quaternion(q),
                translation: Vector3::from(self.p_body_camera),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibFile {
    pub visual: CameraCalib,
    pub thermal: CameraCalib,
}

pub fn write_calib(path: &Path, rig: &CameraRig) -> Result<()> {
    let calib = CalibFile {
        visual: CameraCalib::from_camera(&rig.visual),
        thermal: CameraCalib::from_camera(&rig.thermal),
    };
    let text = toml::to_string(&calib).map_err(|e| VioError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| VioError::io(path, e))
}

pub fn read_calib(path: &Path) -> Result<CameraRig> {
    let text = std::fs::read_to_string(path).map_err(|e| VioError::io(path, e))?;
    let config_err = |message: String| VioError::Config {
        path: path.to_path_buf(),
        message,
    };
    let calib: CalibFile = toml::from_str(&text).map_err(|e| config_err(e.to_string()))?;
    Ok(CameraRig {
        visual: calib
            .visual
            .to_camera(Spectrum::Visual)
            .map_err(config_err)?,
        thermal: calib
            .thermal
            .to_camera(Spectrum::Thermal)
            .map_err(config_err)?,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| VioError::io(path, e))
}

/// Writes a header plus one comma-joined row per item.
pub fn write_rows<T>(
    path: &Path,
    header: &str,
    rows: &[T],
    row: impl Fn(&T) -> Vec<String>,
) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| VioError::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for r in rows {
        writeln!(w, "{}", row(r).join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    write_rows(path, IMU_HEADER, samples, |s| {
        std::iter::once(s.timestamp)
            .chain(s.f_hat.iter().copied())
            .chain(s.omega_hat.iter().copied())
            .map(fmt9)
            .collect()
    })
}

pub fn write_ground_truth_csv(path: &Path, records: &[GroundTruthRecord]) -> Result<()> {
    write_rows(path, GROUND_TRUTH_HEADER, records, |g| {
        let q = g.orientation.quaternion();
        [
            g.timestamp,
            g.position.x,
            g.position.y,
            g.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
            g.velocity.x,
            g.velocity.y,
            g.velocity.z,
        ]
        .map(fmt9)
        .to_vec()
    })
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// A frame listed in `visual.csv` / `thermal.csv`, loaded on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub index: usize,
    pub timestamp: f64,
    pub path: PathBuf,
    pub spectrum: Spectrum,
}

impl FrameEntry {
    pub fn load(&self) -> Result<Frame> {
        Frame::load(
            &self.path,
            self.timestamp,
            self.spectrum,
            self.spectrum.name(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub rig: CameraRig,
    pub visual: Vec<FrameEntry>,
    pub thermal: Vec<FrameEntry>,
    pub imu: Vec<ImuSample>,
    /// Empty when the dataset carries no ground truth.
    pub ground_truth: Vec<GroundTruthRecord>,
}

fn ingest_err(file: &Path, row: usize, message: impl Into<String>) -> VioError {
    VioError::Ingest {
        file: file.to_path_buf(),
        row,
        message: message.into(),
    }
}

/// Reads a numeric CSV with exactly the expected header. Row numbers in errors are 1-based
/// file lines, so the header is row 1.
pub(crate) fn read_numeric_csv(path: &Path, header: &str) -> Result<Vec<Vec<f64>>> {
    if !path.is_file() {
        return Err(ingest_err(path, 0, "missing file"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest_err(path, 0, e.to_string()))?;
    let expected: Vec<&str> = header.split(',').collect();
    let found = reader
        .headers()
        .map_err(|e| ingest_err(path, 1, e.to_string()))?;
    if found.iter().collect::<Vec<_>>() != expected {
        return Err(ingest_err(path, 1, format!("expected header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| ingest_err(path, line, e.to_string()))?;
        if record.len() != expected.len() {
            return Err(ingest_err(
                path,
                line,
                format!("expected {} fields, found {}", expected.len(), record.len()),
            ));
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in expected.iter().zip(record.iter()) {
            let v: f64 = field
                .parse()
                .map_err(|_| ingest_err(path, line, format!("{col}: cannot parse `{field}`")))?;
            if !v.is_finite() {
                return Err(ingest_err(path, line, format!("{col}: non-finite value")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn check_increasing(path: &Path, times: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for (i, t) in times.enumerate() {
        if t <= prev {
            return Err(ingest_err(path, i + 2, "timestamps must strictly increase"));
        }
        prev = t;
    }
    Ok(())
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(ingest_err(root, 0, "dataset directory does not exist"));
        }
        let rig = read_calib(&root.join(CALIB_FILE))?;

        let imu_path = root.join("imu.csv");
        let imu: Vec<ImuSample> = read_numeric_csv(&imu_path, IMU_HEADER)?
            .into_iter()
            .map(|r| {
                ImuSample::new(
                    r[0],
                    Vector3::new(r[1], r[2], r[3]),
                    Vector3::new(r[4], r[5], r[6]),
                )
            })
            .collect();
        check_increasing(&imu_path, imu.iter().map(|s| s.timestamp))?;
        if imu.len() < 2 {
            return Err(ingest_err(&imu_path, 0, "need at least two IMU samples"));
        }

        let gt_path = root.join("ground_truth.csv");
        let ground_truth = if gt_path.exists() {
            let rows = read_numeric_csv(&gt_path, GROUND_TRUTH_HEADER)?;
            check_increasing(&gt_path, rows.iter().map(|r| r[0]))?;
            rows.into_iter()
                .map(|r| GroundTruthRecord {
                    timestamp: r[0],
                    position: Vector3::new(r[1], r[2], r[3]),
                    orientation: UnitQuaternion::from_quaternion(Quaternion::new(
                        r[4], r[5], r[6], r[7],
                    )),
                    velocity: Vector3::new(r[8], r[9], r[10]),
                })
                .collect()
        } else {
            Vec::new()
        };

        let frames = |spectrum: Spectrum| -> Result<Vec<FrameEntry>> {
            let name = spectrum.name();
            let index_path = root.join(format!("{name}.csv"));
            let rows = read_numeric_csv(&index_path, FRAME_INDEX_HEADER)?;
            check_increasing(&index_path, rows.iter().map(|r| r[1]))?;
            let mut out = Vec::with_capacity(rows.len());
            for (i, r) in rows.iter().enumerate() {
                if r[0] < 0.0 || r[0].fract() != 0.0 {
                    return Err(ingest_err(
                        &index_path,
                        i + 2,
                        "frame_index must be a non-negative integer",
                    ));
                }
                let index = r[0] as usize;
                let path = root.join(name).join(frame_file_name(index));
                if !path.is_file() {
                    return Err(ingest_err(
                        &index_path,
                        i + 2,
                        format!("missing frame {}", path.display()),
                    ));
                }
                out.push(FrameEntry {
                    index,
                    timestamp: r[1],
                    path,
                    spectrum,
                });
            }
            Ok(out)
        };
        let visual = frames(Spectrum::Visual)?;
        let thermal = frames(Spectrum::Thermal)?;

        Ok(Dataset {
            root: root.to_path_buf(),
            rig,
            visual,
            thermal,
            imu,
            ground_truth,
        })
    }
}
