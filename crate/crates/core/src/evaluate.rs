//! Accuracy metrics for a finished run, including the IMU-prediction
//! deviation over a fixed horizon.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{LoadedDataset, RunReport, Summary, UpdateRecord};
use crate::odometry::{ImuSample, PoseMeasurement};
use crate::so3;

pub const DEFAULT_HORIZON: f64 = 0.5;

/// Accelerometer intrinsics together with the full gravity vector used to
/// turn specific force into inertial acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub sensitivity: Matrix3<f64>,
    pub bias: Vector3<f64>,
    /// Inertial gravity vector, pointing up, m/s².
    pub gravity: Vector3<f64>,
}

impl Intrinsics {
    pub fn prior(gravity: Vector3<f64>) -> Self {
        Self {
            sensitivity: Matrix3::identity(),
            bias: Vector3::zeros(),
            gravity,
        }
    }

    fn from_record(r: &UpdateRecord, magnitude: f64) -> Self {
        Self {
            sensitivity: r.sensitivity_matrix(),
            bias: r.bias_vector(),
            gravity: r.gravity_direction() * magnitude,
        }
    }

    pub fn inertial(&self, accel: &Vector3<f64>, r: &Rotation3<f64>) -> Vector3<f64> {
        r * (self.sensitivity * accel - self.bias) - self.gravity
    }
}

/// Orientation at `t` by spherical interpolation between the bracketing poses.
pub fn orientation_at(poses: &[PoseMeasurement], t: f64) -> Option<Rotation3<f64>> {
    let k = poses.partition_point(|p| p.t <= t);
    if k == 0 {
        return None;
    }
    let a = &poses[k - 1];
    if a.t == t || k == poses.len() {
        return (a.t == t).then_some(a.orientation);
    }
    let b = &poses[k];
    Some(so3::slerp(&a.orientation, &b.orientation, (t - a.t) / (b.t - a.t)))
}

/// Integrates position from `t0` to `t1` treating each IMU sample as
/// constant until the next one. Returns `None` when the samples do not
/// cover the span.
pub fn propagate(
    imu: &[ImuSample],
    poses: &[PoseMeasurement],
    intrinsics: &Intrinsics,
    p0: Vector3<f64>,
    v0: Vector3<f64>,
    t0: f64,
    t1: f64,
) -> Option<Vector3<f64>> {
    let mut i = imu.partition_point(|s| s.t <= t0).checked_sub(1)?;
    if imu.last()?.t < t1 {
        return None;
    }
    let (mut p, mut v, mut t) = (p0, v0, t0);
    while t < t1 {
        let s = &imu[i];
        let end = imu.get(i + 1).map_or(t1, |n| n.t.min(t1));
        let dt = end - t;
        if dt > 0.0 {
            let r = match s.orientation {
                Some(r) => r,
                None => orientation_at(poses, s.t.max(t0))?,
            };
            let a = intrinsics.inertial(&s.accel, &r);
            p += v * dt + a * (0.5 * dt * dt);
            v += a * dt;
        }
        t = end;
        i += 1;
    }
    Some(p)
}

/// For each start pose, the distance between the pose one horizon later and
/// the IMU prediction started from the measured position and the true
/// velocity. `schedule` picks the intrinsics in force at the start time.
pub fn prediction_deviations(
    data: &LoadedDataset,
    horizon: f64,
    schedule: impl Fn(f64) -> Intrinsics,
) -> Result<Vec<f64>> {
    let truth = data
        .truth
        .as_ref()
        .ok_or_else(|| Error::Mismatch("prediction deviation needs truth velocities".into()))?;
    if truth.len() != data.poses.len() {
        return Err(Error::Mismatch(format!(
            "{} truth rows for {} poses",
            truth.len(),
            data.poses.len()
        )));
    }
    let mut out = Vec::new();
    for (k, start) in data.poses.iter().enumerate() {
        if (truth[k].t - start.t).abs() > 1e-9 {
            return Err(Error::Mismatch(format!(
                "truth time {} does not match pose time {}",
                truth[k].t, start.t
            )));
        }
        // First pose at or after the horizon; jittered poses stretch the span slightly.
        let target = start.t + horizon - 1e-9;
        let j = k + data.poses[k..].partition_point(|p| p.t < target);
        if j >= data.poses.len() {
            break;
        }
        let end = &data.poses[j];
        let intr = schedule(start.t);
        if let Some(p) = propagate(&data.imu, &data.poses, &intr, start.position, truth[k].v, start.t, end.t) {
            out.push((p - end.position).norm());
        }
    }
    Ok(out)
}

fn rmse(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub gravity_error_deg: f64,
    pub bias_error: [f64; 3],
    pub bias_rmse: f64,
    pub sensitivity_max_error: f64,
    pub horizon: f64,
    pub predictions: usize,
    /// RMSE deviation using the estimated intrinsics in force at each start time, m.
    pub prediction_rmse: Option<f64>,
    /// RMSE deviation with identity sensitivity and zero bias, m.
    pub prediction_rmse_prior: Option<f64>,
}

/// Intrinsics schedule from a report: the latest record at or before `t`,
/// or the prior with the first record's gravity before any record exists.
pub fn record_schedule(report: &RunReport) -> impl Fn(f64) -> Intrinsics + '_ {
    let g = report.gravity_magnitude;
    move |t| {
        let k = report.records.partition_point(|r| r.t <= t);
        match k {
            0 => Intrinsics::prior(report.records[0].gravity_direction() * g),
            _ => Intrinsics::from_record(&report.records[k - 1], g),
        }
    }
}

pub fn evaluate(report: &RunReport, data: &LoadedDataset, horizon: f64) -> Result<Metrics> {
    let meta = data
        .meta
        .as_ref()
        .ok_or_else(|| Error::Mismatch("evaluation needs the dataset metadata".into()))?;
    let last = report
        .records
        .last()
        .ok_or_else(|| Error::Mismatch("report has no records".into()))?;
    if let (Some(first), Some(pose)) = (report.records.first(), data.poses.first()) {
        let end = data.poses.last().map_or(pose.t, |p| p.t);
        if first.t < pose.t || last.t > end {
            return Err(Error::Mismatch(format!(
                "report spans [{}, {}] outside the dataset [{}, {end}]",
                first.t, last.t, pose.t
            )));
        }
    }
    let summary = Summary::compute(last, &meta.scenario);
    let estimated = record_schedule(report);
    let dev = prediction_deviations(data, horizon, &estimated)?;
    let dev_prior = prediction_deviations(data, horizon, |t| Intrinsics::prior(estimated(t).gravity))?;
    Ok(Metrics {
        gravity_error_deg: summary.gravity_error_deg,
        bias_error: summary.bias_error,
        bias_rmse: summary.bias_rmse,
        sensitivity_max_error: summary.sensitivity_max_error,
        horizon,
        predictions: dev.len(),
        prediction_rmse: rmse(&dev),
        prediction_rmse_prior: rmse(&dev_prior),
    })
}
