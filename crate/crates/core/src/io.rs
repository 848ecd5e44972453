//! Dataset files, run configuration and report serialization.
//!
//! A dataset directory holds `imu.csv`, `poses.csv`, and optionally
//! `truth.csv` and `meta.json` when it was produced by the simulator.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Estimate, EstimatorConfig};
use crate::map_gravity::AlignParams;
use crate::nlls::Status;
use crate::odometry::{ImuSample, PoseMeasurement, STANDARD_GRAVITY};
use crate::so3;
use crate::synth::{Dataset, ScenarioConfig, ScenarioParams, TrueState};

pub const IMU_FILE: &str = "imu.csv";
pub const POSES_FILE: &str = "poses.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const META_FILE: &str = "meta.json";

const IMU_HEADER: [&str; 4] = ["t", "ax", "ay", "az"];
const QUAT_HEADER: [&str; 4] = ["qw", "qx", "qy", "qz"];
const POSE_HEADER: [&str; 15] = [
    "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "cxx", "cxy", "cxz", "cyy", "cyz", "czz",
    "keyframe",
];
const TRUTH_HEADER: [&str; 14] = [
    "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "ax", "ay", "az",
];

/// Formats a timestamp losslessly with at least nine fractional digits.
pub fn format_time(t: f64) -> String {
    let mut s = format!("{t}");
    if s.contains('e') || !t.is_finite() {
        return format!("{t:.17}");
    }
    let frac = match s.find('.') {
        Some(i) => s.len() - i - 1,
        None => {
            s.push('.');
            0
        }
    };
    for _ in frac..9 {
        s.push('0');
    }
    s
}

fn format_value(x: f64) -> String {
    format!("{x}")
}

struct RowReader<'a> {
    file: &'a str,
    line: usize,
    record: &'a csv::StringRecord,
}

impl RowReader<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Data {
            file: self.file.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn f64(&self, col: usize) -> Result<f64> {
        let raw = self
            .record
            .get(col)
            .ok_or_else(|| self.error(format!("missing column {}", col + 1)))?;
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| self.error(format!("column {}: cannot parse {raw:?} as a number", col + 1)))?;
        if !v.is_finite() {
            return Err(self.error(format!("column {}: non-finite value", col + 1)));
        }
        Ok(v)
    }

    fn vec3(&self, col: usize) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64(col)?, self.f64(col + 1)?, self.f64(col + 2)?))
    }

    fn rotation(&self, col: usize) -> Result<nalgebra::Rotation3<f64>> {
        let (w, x, y, z) = (self.f64(col)?, self.f64(col + 1)?, self.f64(col + 2)?, self.f64(col + 3)?);
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(self.error(format!("quaternion norm {n} is not 1")));
        }
        Ok(so3::from_quaternion_wxyz(w, x, y, z))
    }
}

/// Reads every data row of a CSV file after checking its header, calling
/// `parse` with the 1-based line number of each row.
fn read_rows<T>(
    path: &Path,
    expected: &[&[&str]],
    mut parse: impl FnMut(&RowReader, usize) -> Result<T>,
) -> Result<Vec<T>> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(&file, e))?;
    let header = reader.headers().map_err(|e| csv_error(&file, e))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let variant = expected
        .iter()
        .position(|h| names == *h)
        .ok_or_else(|| Error::Data {
            file: file.clone(),
            line: 1,
            message: format!("unexpected header {names:?}"),
        })?;
    let width = expected[variant].len();
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(&file, e)),
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = RowReader {
            file: &file,
            line,
            record: &record,
        };
        if record.len() != width {
            return Err(row.error(format!("expected {width} columns, found {}", record.len())));
        }
        out.push(parse(&row, variant)?);
    }
    Ok(out)
}

fn csv_error(file: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data {
            file: file.to_string(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn check_monotonic(row: &RowReader, t: f64, previous: &mut Option<f64>) -> Result<()> {
    if let Some(p) = *previous {
        if t < p {
            return Err(row.error(format!("timestamp {t} precedes previous timestamp {p}")));
        }
    }
    *previous = Some(t);
    Ok(())
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>> {
    let with_quat: Vec<&str> = IMU_HEADER.iter().chain(QUAT_HEADER.iter()).copied().collect();
    let mut previous = None;
    read_rows(path, &[&IMU_HEADER, &with_quat], |row, variant| {
        let t = row.f64(0)?;
        check_monotonic(row, t, &mut previous)?;
        Ok(ImuSample {
            t,
            accel: row.vec3(1)?,
            orientation: if variant == 1 { Some(row.rotation(4)?) } else { None },
        })
    })
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseMeasurement>> {
    let mut previous = None;
    read_rows(path, &[&POSE_HEADER], |row, _| {
        let t = row.f64(0)?;
        check_monotonic(row, t, &mut previous)?;
        let c = [
            row.f64(8)?,
            row.f64(9)?,
            row.f64(10)?,
            row.f64(11)?,
            row.f64(12)?,
            row.f64(13)?,
        ];
        let cov = Matrix3::new(c[0], c[1], c[2], c[1], c[3], c[4], c[2], c[4], c[5]);
        if cov.symmetric_eigenvalues().min() < -1e-12 {
            return Err(row.error("position covariance is not positive semi-definite"));
        }
        let keyframe = match row.record.get(14).map(str::trim) {
            Some("0") => false,
            Some("1") => true,
            other => return Err(row.error(format!("keyframe flag must be 0 or 1, got {other:?}"))),
        };
        Ok(PoseMeasurement {
            t,
            position: row.vec3(1)?,
            orientation: row.rotation(4)?,
            position_cov: cov,
            keyframe,
        })
    })
}

pub fn read_truth(path: &Path) -> Result<Vec<TrueState>> {
    let mut previous = None;
    read_rows(path, &[&TRUTH_HEADER], |row, _| {
        let t = row.f64(0)?;
        check_monotonic(row, t, &mut previous)?;
        Ok(TrueState {
            t,
            p: row.vec3(1)?,
            r: row.rotation(4)?,
            v: row.vec3(8)?,
            a: row.vec3(11)?,
        })
    })
}

fn quat_fields(r: &nalgebra::Rotation3<f64>) -> [String; 4] {
    so3::to_quaternion_wxyz(r).map(format_value)
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(&path.display().to_string(), e))?;
    let file = path.display().to_string();
    w.write_record(header).map_err(|e| csv_error(&file, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_error(&file, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_imu(path: &Path, imu: &[ImuSample]) -> Result<()> {
    let with_quat = imu.first().is_some_and(|s| s.orientation.is_some());
    if imu.iter().any(|s| s.orientation.is_some() != with_quat) {
        return Err(Error::Mismatch("IMU samples mix present and missing orientations".into()));
    }
    let mut header: Vec<&str> = IMU_HEADER.to_vec();
    if with_quat {
        header.extend(QUAT_HEADER);
    }
    write_csv(
        path,
        &header,
        imu.iter().map(|s| {
            let mut r = vec![format_time(s.t)];
            r.extend(s.accel.iter().map(|x| format_value(*x)));
            if let Some(q) = &s.orientation {
                r.extend(quat_fields(q));
            }
            r
        }),
    )
}

pub fn write_poses(path: &Path, poses: &[PoseMeasurement]) -> Result<()> {
    write_csv(
        path,
        &POSE_HEADER,
        poses.iter().map(|p| {
            let c = &p.position_cov;
            let mut r = vec![format_time(p.t)];
            r.extend(p.position.iter().map(|x| format_value(*x)));
            r.extend(quat_fields(&p.orientation));
            for (i, j) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
                r.push(format_value(c[(i, j)]));
            }
            r.push(if p.keyframe { "1" } else { "0" }.to_string());
            r
        }),
    )
}

pub fn write_truth(path: &Path, truth: &[TrueState]) -> Result<()> {
    write_csv(
        path,
        &TRUTH_HEADER,
        truth.iter().map(|s| {
            let mut r = vec![format_time(s.t)];
            r.extend(s.p.iter().map(|x| format_value(*x)));
            r.extend(quat_fields(&s.r));
            r.extend(s.v.iter().chain(s.a.iter()).map(|x| format_value(*x)));
            r
        }),
    )
}

/// Sidecar describing how a dataset was generated, including the true intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub scenario: ScenarioConfig,
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub imu: Vec<ImuSample>,
    pub poses: Vec<PoseMeasurement>,
    pub truth: Option<Vec<TrueState>>,
    pub meta: Option<Meta>,
}

impl From<Dataset> for LoadedDataset {
    fn from(d: Dataset) -> Self {
        Self {
            imu: d.imu,
            poses: d.poses,
            truth: Some(d.truth),
            meta: Some(Meta { scenario: d.config }),
        }
    }
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_imu(&dir.join(IMU_FILE), &data.imu)?;
    write_poses(&dir.join(POSES_FILE), &data.poses)?;
    write_truth(&dir.join(TRUTH_FILE), &data.truth)?;
    let meta = Meta {
        scenario: data.config.clone(),
    };
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<LoadedDataset> {
    let imu = read_imu(&dir.join(IMU_FILE))?;
    let poses = read_poses(&dir.join(POSES_FILE))?;
    let truth_path = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() {
        Some(read_truth(&truth_path)?)
    } else {
        None
    };
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path)?;
        Some(serde_json::from_str(&text).map_err(|e| Error::Data {
            file: meta_path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?)
    } else {
        None
    };
    Ok(LoadedDataset {
        imu,
        poses,
        truth,
        meta,
    })
}

/// Contents of the TOML configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioParams,
    pub estimator: EstimatorConfig,
    pub align: AlignParams,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.estimator.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// One published estimate in flattened form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub t: f64,
    pub interval_id: u32,
    /// Row-major.
    pub sensitivity: [f64; 9],
    pub bias: [f64; 3],
    /// Unit gravity direction.
    pub gravity: [f64; 3],
    /// Tangent covariance of the gravity direction, row-major, rad².
    pub gravity_cov: [f64; 4],
    pub cost: f64,
    pub iterations: usize,
    pub status: Status,
    pub live_intervals: usize,
    pub wall_time: f64,
}

impl From<&Estimate> for UpdateRecord {
    fn from(e: &Estimate) -> Self {
        let s = &e.sensitivity;
        let c = &e.gravity_cov;
        Self {
            t: e.t,
            interval_id: e.interval_id,
            sensitivity: std::array::from_fn(|k| s[(k / 3, k % 3)]),
            bias: [e.bias.x, e.bias.y, e.bias.z],
            gravity: {
                let g = e.gravity.vector();
                [g.x, g.y, g.z]
            },
            gravity_cov: [c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]],
            cost: e.cost,
            iterations: e.iterations,
            status: e.status,
            live_intervals: e.live_intervals,
            wall_time: e.update_seconds,
        }
    }
}

impl UpdateRecord {
    pub fn sensitivity_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.sensitivity)
    }

    pub fn bias_vector(&self) -> Vector3<f64> {
        Vector3::from(self.bias)
    }

    pub fn gravity_direction(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    pub fn gravity_covariance(&self) -> Matrix2<f64> {
        Matrix2::from_row_slice(&self.gravity_cov)
    }
}

/// Final estimate errors against known truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub gravity_error_deg: f64,
    pub bias_error: [f64; 3],
    pub bias_rmse: f64,
    pub sensitivity_max_error: f64,
}

impl Summary {
    pub fn compute(record: &UpdateRecord, truth: &ScenarioConfig) -> Self {
        let db = record.bias_vector() - truth.bias();
        Self {
            gravity_error_deg: record.gravity_direction().angle(&truth.gravity()).to_degrees(),
            bias_error: [db.x, db.y, db.z],
            bias_rmse: (db.norm_squared() / 3.0).sqrt(),
            sensitivity_max_error: (record.sensitivity_matrix() - truth.sensitivity()).amax(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub gravity_magnitude: f64,
    pub records: Vec<UpdateRecord>,
    pub summary: Option<Summary>,
}

impl RunReport {
    pub fn new(estimates: &[Estimate], gravity_magnitude: f64, truth: Option<&ScenarioConfig>) -> Self {
        let records: Vec<UpdateRecord> = estimates.iter().map(UpdateRecord::from).collect();
        let summary = match (records.last(), truth) {
            (Some(r), Some(t)) => Some(Summary::compute(r, t)),
            _ => None,
        };
        Self {
            gravity_magnitude,
            records,
            summary,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Data {
            file: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// One row per record: time, sensitivity, bias, gravity, covariance and solver stats.
    pub fn write_timeseries(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        let mut header = vec!["t".to_string()];
        header.extend((0..9).map(|k| format!("s{}{}", k / 3, k % 3)));
        header.extend(["bx", "by", "bz", "gx", "gy", "gz", "cov00", "cov01", "cov11"].map(String::from));
        header.extend(["cost", "iterations", "live_intervals", "wall_time"].map(String::from));
        writeln!(f, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![format_time(r.t)];
            row.extend(r.sensitivity.iter().chain(&r.bias).chain(&r.gravity).map(|x| format_value(*x)));
            row.extend([r.gravity_cov[0], r.gravity_cov[1], r.gravity_cov[3]].map(format_value));
            row.push(format_value(r.cost));
            row.push(r.iterations.to_string());
            row.push(r.live_intervals.to_string());
            row.push(format_value(r.wall_time));
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Gravity magnitude recorded in the metadata, or standard gravity.
pub fn dataset_gravity_magnitude(data: &LoadedDataset) -> f64 {
    data.meta
        .as_ref()
        .map_or(STANDARD_GRAVITY, |m| m.scenario.gravity().norm())
}
