//! Fixed-lag estimator of accelerometer intrinsics and gravity direction.
//!
//! Time is split into intervals of length `T_m`, each with its own
//! sensitivity `S_i`, bias `b_i` and gravity direction `g_i`. Odometry
//! factors constrain the interval containing their newest pose; consecutive
//! intervals are tied by random-walk factors; intervals older than the lag
//! `T_l` are marginalized into a linear prior.

mod factor;

use std::collections::VecDeque;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nlls::{
    self, marginal_covariance, sqrt_info_from_sigmas, FactorGraph, Key, LmParams, S2Between,
    S2Prior, Status, Values, Variable, VectorBetween, VectorPrior,
};
use crate::odometry::{
    build_factor, prepare_samples, unvectorize, vectorize, ImuSample, PoseMeasurement,
    STANDARD_GRAVITY,
};
use crate::s2::S2Point;

pub use factor::OdometryNode;

/// Odometry factors need at least this many samples across the triplet.
pub const MIN_FACTOR_SAMPLES: usize = 4;

/// Which Jacobians the gravity diffusion and prior factors use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum S2JacobianMode {
    /// Chain rule through the logarithm map.
    #[default]
    Exact,
    /// `(−I, I)`, valid for nearby points.
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Interval length `T_m`, s.
    pub interval: f64,
    /// Lag `T_l`, s. Use `inf` to keep every interval.
    pub lag: f64,
    /// Run an update every this many processed poses.
    pub update_every: usize,
    /// Accelerometer white-noise standard deviation, m/s².
    pub sigma_a: f64,
    pub gravity_magnitude: f64,
    /// Samples averaged for the initial gravity direction without a hint.
    pub hint_samples: usize,
    pub prior_s_diagonal: f64,
    pub prior_s_off_diagonal: f64,
    /// m/s².
    pub prior_bias: f64,
    /// Gravity prior per tangent axis without a hint, degrees.
    pub prior_gravity_deg: f64,
    /// Gravity prior per tangent axis with a supplied hint, degrees.
    pub prior_gravity_hint_deg: f64,
    /// Bias random walk, m/s²/√s.
    pub diffusion_bias: f64,
    /// Sensitivity random walk, 1/√s.
    pub diffusion_s: f64,
    /// Gravity random walk, degrees per √keyframe.
    pub diffusion_gravity_deg: f64,
    /// Floor used for intervals without keyframes, degrees.
    pub diffusion_gravity_floor_deg: f64,
    pub magnitude_s: f64,
    /// m/s².
    pub magnitude_bias: f64,
    pub s2_jacobians: S2JacobianMode,
    pub solver: LmParams,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            interval: 3.0,
            lag: 60.0,
            update_every: 5,
            sigma_a: 0.05,
            gravity_magnitude: STANDARD_GRAVITY,
            hint_samples: 20,
            prior_s_diagonal: 0.02,
            prior_s_off_diagonal: 0.01,
            prior_bias: 0.5,
            prior_gravity_deg: 10.0,
            prior_gravity_hint_deg: 2.0,
            diffusion_bias: 0.005,
            diffusion_s: 5e-5,
            diffusion_gravity_deg: 0.05,
            diffusion_gravity_floor_deg: 0.005,
            magnitude_s: 0.05,
            magnitude_bias: 1.0,
            s2_jacobians: S2JacobianMode::Exact,
            solver: LmParams::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("interval", self.interval),
            ("gravity_magnitude", self.gravity_magnitude),
            ("prior_s_diagonal", self.prior_s_diagonal),
            ("prior_s_off_diagonal", self.prior_s_off_diagonal),
            ("prior_bias", self.prior_bias),
            ("prior_gravity_deg", self.prior_gravity_deg),
            ("prior_gravity_hint_deg", self.prior_gravity_hint_deg),
            ("diffusion_bias", self.diffusion_bias),
            ("diffusion_s", self.diffusion_s),
            ("diffusion_gravity_floor_deg", self.diffusion_gravity_floor_deg),
            ("magnitude_s", self.magnitude_s),
            ("magnitude_bias", self.magnitude_bias),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma_a >= 0.0 && self.sigma_a.is_finite()) {
            return Err(Error::Config(format!("sigma_a must be non-negative, got {}", self.sigma_a)));
        }
        if !(self.diffusion_gravity_deg >= 0.0) {
            return Err(Error::Config("diffusion_gravity_deg must be non-negative".into()));
        }
        if !(self.lag >= 3.0 * self.interval) {
            return Err(Error::Config(format!(
                "lag {} must be at least three intervals ({})",
                self.lag,
                3.0 * self.interval
            )));
        }
        if self.update_every == 0 || self.hint_samples == 0 {
            return Err(Error::Config("update_every and hint_samples must be at least 1".into()));
        }
        if self.solver.max_iterations == 0 {
            return Err(Error::Config("solver.max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    fn exact_jacobians(&self) -> bool {
        self.s2_jacobians == S2JacobianMode::Exact
    }
}

/// Snapshot published after each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    /// Time of the newest processed pose.
    pub t: f64,
    pub interval_id: u32,
    pub sensitivity: Matrix3<f64>,
    pub bias: Vector3<f64>,
    pub gravity: S2Point,
    /// Tangent covariance of `gravity` in its basis, rad².
    pub gravity_cov: Matrix2<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub status: Status,
    pub live_intervals: usize,
    /// Wall time of the update, s.
    pub update_seconds: f64,
}

impl Estimate {
    pub fn gravity_vector(&self, magnitude: f64) -> Vector3<f64> {
        self.gravity.vector() * magnitude
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Interval {
    id: u32,
    keyframes: u32,
}

fn s_key(i: u32) -> Key {
    Key::new('s', i)
}

fn b_key(i: u32) -> Key {
    Key::new('b', i)
}

fn g_key(i: u32) -> Key {
    Key::new('g', i)
}

/// Streaming estimator. Feed time-ordered IMU samples and poses; an update
/// runs automatically every `update_every` processed poses and its estimate
/// is queued for [`Estimator::drain_estimates`].
#[derive(Debug, Clone)]
pub struct Estimator {
    config: EstimatorConfig,
    gravity_hint: Option<S2Point>,
    gravity_prior: Option<S2Point>,
    graph: FactorGraph,
    values: Values,
    intervals: VecDeque<Interval>,
    origin: Option<f64>,
    imu: VecDeque<ImuSample>,
    imu_seen: usize,
    early_imu: Vec<ImuSample>,
    pending: VecDeque<PoseMeasurement>,
    recent: VecDeque<PoseMeasurement>,
    last_pose_t: Option<f64>,
    now: f64,
    poses_since_update: usize,
    odometry_total: usize,
    skipped: usize,
    published: Vec<Estimate>,
    latest: Option<Estimate>,
}

/// One input to the estimator, used to replay merged streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    Imu(ImuSample),
    Pose(PoseMeasurement),
}

impl Measurement {
    pub fn t(&self) -> f64 {
        match self {
            Measurement::Imu(s) => s.t,
            Measurement::Pose(p) => p.t,
        }
    }
}

/// Merges both streams by timestamp. A pose goes before an IMU sample
/// carrying the same timestamp.
pub fn interleave(imu: &[ImuSample], poses: &[PoseMeasurement]) -> Vec<Measurement> {
    let mut out = Vec::with_capacity(imu.len() + poses.len());
    let mut p = 0;
    for s in imu {
        while p < poses.len() && poses[p].t <= s.t {
            out.push(Measurement::Pose(poses[p]));
            p += 1;
        }
        out.push(Measurement::Imu(*s));
    }
    out.extend(poses[p..].iter().map(|x| Measurement::Pose(*x)));
    out
}

/// Replays a whole recording and returns every published estimate.
pub fn run(
    config: EstimatorConfig,
    gravity_hint: Option<S2Point>,
    imu: &[ImuSample],
    poses: &[PoseMeasurement],
) -> Result<Vec<Estimate>> {
    let mut est = Estimator::new(config, gravity_hint)?;
    for m in interleave(imu, poses) {
        est.add(m)?;
    }
    est.finish()?;
    Ok(est.drain_estimates())
}

impl Estimator {
    pub fn new(config: EstimatorConfig, gravity_hint: Option<S2Point>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            gravity_hint,
            gravity_prior: None,
            graph: FactorGraph::new(),
            values: Values::new(),
            intervals: VecDeque::new(),
            origin: None,
            imu: VecDeque::new(),
            imu_seen: 0,
            early_imu: Vec::new(),
            pending: VecDeque::new(),
            recent: VecDeque::new(),
            last_pose_t: None,
            now: f64::NEG_INFINITY,
            poses_since_update: 0,
            odometry_total: 0,
            skipped: 0,
            published: Vec::new(),
            latest: None,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn add(&mut self, m: Measurement) -> Result<()> {
        match m {
            Measurement::Imu(s) => self.add_imu(s),
            Measurement::Pose(p) => self.add_pose(p),
        }
    }

    pub fn add_imu(&mut self, sample: ImuSample) -> Result<()> {
        if let Some(last) = self.imu.back() {
            if sample.t < last.t {
                return Err(Error::NonMonotonicTime {
                    previous: last.t,
                    got: sample.t,
                });
            }
        }
        if self.imu_seen < self.config.hint_samples {
            self.early_imu.push(sample);
        }
        self.imu_seen += 1;
        self.imu.push_back(sample);
        self.process_ready()
    }

    pub fn add_pose(&mut self, pose: PoseMeasurement) -> Result<()> {
        if let Some(prev) = self.last_pose_t {
            if pose.t < prev {
                return Err(Error::NonMonotonicTime {
                    previous: prev,
                    got: pose.t,
                });
            }
            if pose.t == prev {
                warn!("dropping pose with repeated timestamp {}", pose.t);
                return Ok(());
            }
        }
        self.last_pose_t = Some(pose.t);
        self.pending.push_back(pose);
        self.process_ready()
    }

    /// Processes poses still waiting for IMU coverage or initialization and
    /// runs a final update if poses were added since the last one.
    pub fn finish(&mut self) -> Result<()> {
        if self.origin.is_none() && !self.pending.is_empty() && !self.imu.is_empty() {
            self.initialize()?;
        }
        self.process_ready()?;
        if self.poses_since_update > 0 {
            self.update()?;
        }
        Ok(())
    }

    fn ready_to_initialize(&self) -> bool {
        self.gravity_hint.is_some() || self.imu_seen >= self.config.hint_samples
    }

    fn process_ready(&mut self) -> Result<()> {
        while let Some(pose) = self.pending.front().copied() {
            let covered = self.imu.back().is_some_and(|s| s.t >= pose.t);
            if !covered {
                break;
            }
            if self.origin.is_none() {
                if !self.ready_to_initialize() {
                    break;
                }
                self.initialize()?;
            }
            self.pending.pop_front();
            self.process_pose(pose)?;
        }
        Ok(())
    }

    /// Initial gravity direction: the hint, or the rotated mean of the
    /// first accelerometer samples.
    fn initial_gravity(&self) -> Result<(S2Point, f64)> {
        if let Some(h) = self.gravity_hint {
            return Ok((h, self.config.prior_gravity_hint_deg));
        }
        let fallback = self.pending.front().map(|p| p.orientation);
        let mut sum = Vector3::zeros();
        for s in &self.early_imu {
            let r = s.orientation.or(fallback).unwrap_or_else(nalgebra::Rotation3::identity);
            sum += r * s.accel;
        }
        let dir = S2Point::new(sum).ok_or_else(|| {
            Error::Config("cannot derive a gravity direction from the first samples".into())
        })?;
        Ok((dir, self.config.prior_gravity_deg))
    }

    fn initialize(&mut self) -> Result<()> {
        let first = self.pending.front().ok_or_else(|| Error::Config("no pose".into()))?;
        let origin = first.t;
        let (g0, sigma_deg) = self.initial_gravity()?;
        debug!("initializing at t={origin} with gravity {:?}", g0.vector());
        self.origin = Some(origin);
        self.gravity_prior = Some(g0);
        self.early_imu.clear();

        let s_sigmas: Vec<f64> = (0..9)
            .map(|k| {
                if k % 4 == 0 {
                    self.config.prior_s_diagonal
                } else {
                    self.config.prior_s_off_diagonal
                }
            })
            .collect();
        let s_mean = DVector::from_column_slice(vectorize(&Matrix3::identity()).as_slice());
        self.values.insert(s_key(0), Variable::Vector(s_mean.clone()));
        self.values.insert(b_key(0), Variable::Vector(DVector::zeros(3)));
        self.values.insert(g_key(0), Variable::S2(g0));
        self.graph.add(VectorPrior::new(s_key(0), s_mean, sqrt_info_from_sigmas(&s_sigmas)));
        self.graph.add(VectorPrior::new(
            b_key(0),
            DVector::zeros(3),
            sqrt_info_from_sigmas(&[self.config.prior_bias; 3]),
        ));
        let sg = sigma_deg.to_radians();
        self.graph.add(S2Prior::new(
            g_key(0),
            g0,
            sqrt_info_from_sigmas(&[sg, sg]),
            self.config.exact_jacobians(),
        ));
        self.intervals.push_back(Interval { id: 0, keyframes: 0 });
        Ok(())
    }

    fn interval_of(&self, t: f64) -> u32 {
        let origin = self.origin.unwrap_or(t);
        ((t - origin) / self.config.interval).floor().max(0.0) as u32
    }

    fn process_pose(&mut self, pose: PoseMeasurement) -> Result<()> {
        self.now = pose.t;
        let id = self.interval_of(pose.t);
        while self.intervals.back().map(|i| i.id).unwrap_or(0) < id {
            self.rollover()?;
        }
        if pose.keyframe {
            if let Some(last) = self.intervals.back_mut() {
                last.keyframes += 1;
            }
        }
        self.recent.push_back(pose);
        if self.recent.len() > 3 {
            self.recent.pop_front();
        }
        if self.recent.len() == 3 {
            self.add_odometry(id)?;
            // The next triplet starts at the middle pose.
            let keep_from = self.recent[1].t;
            while self.imu.len() > 1 && self.imu[1].t <= keep_from {
                self.imu.pop_front();
            }
        }
        self.poses_since_update += 1;
        if self.poses_since_update >= self.config.update_every {
            self.update()?;
        }
        Ok(())
    }

    fn add_odometry(&mut self, id: u32) -> Result<()> {
        let poses = [self.recent[0], self.recent[1], self.recent[2]];
        let (imu, _) = self.imu.as_slices();
        let contiguous;
        let imu: &[ImuSample] = if imu.len() == self.imu.len() {
            imu
        } else {
            contiguous = self.imu.iter().copied().collect::<Vec<_>>();
            &contiguous
        };
        let (samples, rots) = match prepare_samples(&poses, imu) {
            Ok(v) => v,
            Err(Error::Coverage { start, end }) => {
                warn!("skipping odometry factor: IMU does not cover [{start}, {end}]");
                self.skipped += 1;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        if samples.len() < MIN_FACTOR_SAMPLES {
            warn!(
                "skipping odometry factor ending at {}: only {} samples",
                poses[2].t,
                samples.len()
            );
            self.skipped += 1;
            return Ok(());
        }
        let mut f = build_factor(&poses, &samples, &rots, self.config.sigma_a)?
            .with_gravity_magnitude(self.config.gravity_magnitude);
        f.interval_id = id;
        self.graph
            .add(OdometryNode::new([s_key(id), b_key(id), g_key(id)], f)?);
        self.odometry_total += 1;
        Ok(())
    }

    /// Opens the next interval, initialized from the current newest estimate.
    fn rollover(&mut self) -> Result<()> {
        let prev = *self
            .intervals
            .back()
            .ok_or_else(|| Error::Config("estimator is not initialized".into()))?;
        let (i, j) = (prev.id, prev.id + 1);
        for key in [s_key(i), b_key(i), g_key(i)] {
            let v = self.values.get(&key)?.clone();
            self.values.insert(Key::new(key.tag(), j), v);
        }
        let c = &self.config;
        let dt = c.interval;
        self.graph.add(VectorBetween::new(
            b_key(i),
            b_key(j),
            sqrt_info_from_sigmas(&[c.diffusion_bias * dt.sqrt(); 3]),
        ));
        self.graph.add(VectorBetween::new(
            s_key(i),
            s_key(j),
            sqrt_info_from_sigmas(&[c.diffusion_s * dt.sqrt(); 9]),
        ));
        let floor = c.diffusion_gravity_floor_deg.to_radians();
        let sg = c.diffusion_gravity_deg.to_radians();
        let var = (sg * sg * prev.keyframes as f64).max(floor * floor);
        self.graph.add(S2Between::new(
            g_key(i),
            g_key(j),
            sqrt_info_from_sigmas(&[var.sqrt(); 2]),
            c.exact_jacobians(),
        ));
        let s_mean = DVector::from_column_slice(vectorize(&Matrix3::identity()).as_slice());
        self.graph.add(VectorPrior::new(
            s_key(j),
            s_mean,
            sqrt_info_from_sigmas(&[c.magnitude_s; 9]),
        ));
        self.graph.add(VectorPrior::new(
            b_key(j),
            DVector::zeros(3),
            sqrt_info_from_sigmas(&[c.magnitude_bias; 3]),
        ));
        self.intervals.push_back(Interval { id: j, keyframes: 0 });
        self.marginalize_expired()?;
        Ok(())
    }

    /// Marginalizes intervals that ended at or before `now − T_l`, always
    /// keeping the newest one.
    fn marginalize_expired(&mut self) -> Result<()> {
        let Some(origin) = self.origin else {
            return Ok(());
        };
        while self.intervals.len() > 1 {
            let oldest = self.intervals[0];
            let end = origin + (oldest.id + 1) as f64 * self.config.interval;
            if end > self.now - self.config.lag {
                break;
            }
            let keys = [s_key(oldest.id), b_key(oldest.id), g_key(oldest.id)];
            nlls::marginalize(&mut self.graph, &mut self.values, &keys)?;
            self.intervals.pop_front();
            debug!("marginalized interval {}", oldest.id);
        }
        Ok(())
    }

    /// Optimizes the window, marginalizes expired intervals and publishes
    /// the newest interval's estimate.
    pub fn update(&mut self) -> Result<Option<Estimate>> {
        let Some(newest) = self.intervals.back().copied() else {
            return Ok(None);
        };
        let start = Instant::now();
        self.poses_since_update = 0;
        let report = nlls::optimize(&self.graph, &mut self.values, &self.config.solver)?;
        self.marginalize_expired()?;
        let gravity_cov = marginal_covariance(&self.graph, &self.values, g_key(newest.id))?;
        let s = self.values.get(&s_key(newest.id))?.as_vector()?;
        let sensitivity = unvectorize(&crate::odometry::Vector9::from_column_slice(s.as_slice()));
        let bias = Vector3::from_column_slice(self.values.get(&b_key(newest.id))?.as_vector()?.as_slice());
        let gravity = *self.values.get(&g_key(newest.id))?.as_s2()?;
        let estimate = Estimate {
            t: self.now,
            interval_id: newest.id,
            sensitivity,
            bias,
            gravity,
            gravity_cov: Matrix2::from_column_slice(gravity_cov.as_slice()),
            cost: report.final_cost,
            iterations: report.iterations,
            status: report.status,
            live_intervals: self.intervals.len(),
            update_seconds: start.elapsed().as_secs_f64(),
        };
        if report.status != Status::Converged {
            warn!("update at t={} ended with status {:?}", self.now, report.status);
        }
        self.published.push(estimate.clone());
        self.latest = Some(estimate.clone());
        Ok(Some(estimate))
    }

    /// Estimates published since the last call.
    pub fn drain_estimates(&mut self) -> Vec<Estimate> {
        std::mem::take(&mut self.published)
    }

    pub fn latest(&self) -> Option<&Estimate> {
        self.latest.as_ref()
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn live_intervals(&self) -> usize {
        self.intervals.len()
    }

    pub fn interval_ids(&self) -> Vec<u32> {
        self.intervals.iter().map(|i| i.id).collect()
    }

    /// Odometry factors currently in the window.
    pub fn live_odometry_factors(&self) -> usize {
        self.graph.count_kind("odometry")
    }

    /// Odometry factors added since construction, including marginalized ones.
    pub fn total_odometry_factors(&self) -> usize {
        self.odometry_total
    }

    pub fn skipped_factors(&self) -> usize {
        self.skipped
    }

    /// Gravity prior mean of interval 0, once initialized.
    pub fn gravity_prior(&self) -> Option<S2Point> {
        self.gravity_prior
    }

    /// Gravity tangent covariance of the newest interval at the current estimate.
    pub fn gravity_covariance(&self) -> Result<DMatrix<f64>> {
        let newest = self
            .intervals
            .back()
            .ok_or_else(|| Error::Config("estimator is not initialized".into()))?;
        marginal_covariance(&self.graph, &self.values, g_key(newest.id))
    }
}
