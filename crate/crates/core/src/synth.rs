//! Synthetic trajectories with known accelerometer intrinsics.
//!
//! Motion is a chain of segments with constant linear jerk and constant
//! body-frame angular acceleration. Positions follow the closed-form cubic,
//! orientation is integrated on a 1 kHz grid. In [`SynthMode::Verification`]
//! the inertial acceleration is held constant between IMU ticks and pose
//! times fall on ticks, so the odometry factor's quadrature is exact.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odometry::{ImuSample, PoseMeasurement, STANDARD_GRAVITY};
use crate::so3;

/// Orientation integration step, s.
pub const ROTATION_STEP: f64 = 1e-3;

/// Length of the segments used by the scenario library, s.
pub const SEGMENT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    /// m/s³, inertial frame.
    pub jerk: [f64; 3],
    /// rad/s², body frame.
    pub angular_accel: [f64; 3],
}

impl Segment {
    pub fn still(duration: f64) -> Self {
        Self {
            duration,
            jerk: [0.0; 3],
            angular_accel: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// Acceleration held on the IMU grid, poses on IMU ticks.
    #[default]
    Verification,
    /// Continuous acceleration, pose times offset by up to `pose_jitter`.
    Realistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub segments: Vec<Segment>,
    /// Hz.
    pub imu_rate: f64,
    /// Hz.
    pub pose_rate: f64,
    /// m/s².
    pub sigma_a: f64,
    /// m.
    pub sigma_p: f64,
    /// Variance multiplier along the x axis of the position noise.
    pub pose_anisotropy: f64,
    /// Rows of the true sensitivity matrix.
    pub true_s: [[f64; 3]; 3],
    pub true_b: [f64; 3],
    /// Inertial gravity vector (pointing up), m/s².
    pub true_g: [f64; 3],
    pub initial_velocity: [f64; 3],
    pub seed: u64,
    pub mode: SynthMode,
    /// s, realistic mode only.
    pub pose_jitter: f64,
    pub keyframe_every: usize,
    /// Attach the emitted orientation (drift included) to each IMU sample.
    pub imu_orientation: bool,
    /// Pitch drift of the odometry frame, degrees, growing linearly to the
    /// end of the run. It rotates emitted positions and every emitted
    /// orientation; the specific force stays exact.
    pub drift_pitch_deg: f64,
}

impl ScenarioConfig {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn sensitivity(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.true_s[r][c])
    }

    pub fn bias(&self) -> Vector3<f64> {
        Vector3::from(self.true_b)
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.true_g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.segments.is_empty() {
            return bad("scenario has no segments".into());
        }
        if self.segments.iter().any(|s| !(s.duration > 0.0)) {
            return bad("segment durations must be positive".into());
        }
        if !(self.imu_rate > 0.0 && self.pose_rate > 0.0) {
            return bad("rates must be positive".into());
        }
        if self.pose_rate > self.imu_rate {
            return bad("pose rate must not exceed the IMU rate".into());
        }
        if !(self.sigma_a >= 0.0 && self.sigma_p >= 0.0 && self.pose_anisotropy > 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        let g = self.gravity().norm();
        if ((g - STANDARD_GRAVITY) / STANDARD_GRAVITY).abs() > 0.01 {
            return bad(format!("|g| = {g} is not within 1% of {STANDARD_GRAVITY}"));
        }
        if self.sensitivity().try_inverse().is_none() {
            return bad("sensitivity matrix is singular".into());
        }
        if self.keyframe_every == 0 {
            return bad("keyframe_every must be at least 1".into());
        }
        if self.mode == SynthMode::Verification {
            let ratio = self.imu_rate / self.pose_rate;
            if (ratio - ratio.round()).abs() > 1e-9 {
                return bad("verification mode needs an integer IMU/pose rate ratio".into());
            }
        } else if !(self.pose_jitter >= 0.0 && self.pose_jitter < 1.0 / self.pose_rate) {
            return bad("pose jitter must be within one pose period".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueState {
    pub t: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Inertial acceleration (gravity excluded), m/s².
    pub a: Vector3<f64>,
    pub r: Rotation3<f64>,
}

#[derive(Debug, Clone, Copy)]
struct SegmentStart {
    t: f64,
    p: Vector3<f64>,
    v: Vector3<f64>,
    a: Vector3<f64>,
    w: Vector3<f64>,
    jerk: Vector3<f64>,
    alpha: Vector3<f64>,
}

/// Continuous motion model of a scenario.
#[derive(Debug, Clone)]
pub struct Motion {
    starts: Vec<SegmentStart>,
    end: f64,
    rot_grid: Vec<Rotation3<f64>>,
}

impl Motion {
    pub fn new(config: &ScenarioConfig) -> Self {
        let mut starts = Vec::with_capacity(config.segments.len());
        let mut t = 0.0;
        let mut p = Vector3::zeros();
        let mut v = Vector3::from(config.initial_velocity);
        let mut a = Vector3::zeros();
        let mut w = Vector3::zeros();
        for seg in &config.segments {
            let jerk = Vector3::from(seg.jerk);
            let alpha = Vector3::from(seg.angular_accel);
            starts.push(SegmentStart { t, p, v, a, w, jerk, alpha });
            let d = seg.duration;
            p += v * d + a * (d * d / 2.0) + jerk * (d * d * d / 6.0);
            v += a * d + jerk * (d * d / 2.0);
            a += jerk * d;
            w += alpha * d;
            t += d;
        }
        let mut motion = Self {
            starts,
            end: t,
            rot_grid: Vec::new(),
        };
        let steps = (t / ROTATION_STEP).ceil() as usize + 1;
        let mut r = Rotation3::identity();
        motion.rot_grid.reserve(steps + 1);
        motion.rot_grid.push(r);
        for k in 0..steps {
            let tk = k as f64 * ROTATION_STEP;
            r = motion.step(&r, tk, ROTATION_STEP);
            motion.rot_grid.push(r);
        }
        motion
    }

    fn segment(&self, t: f64) -> &SegmentStart {
        let i = self.starts.partition_point(|s| s.t <= t).max(1) - 1;
        &self.starts[i]
    }

    /// Midpoint step of `Ṙ = R [ω]×` with piecewise-linear `ω`.
    fn step(&self, r: &Rotation3<f64>, t: f64, dt: f64) -> Rotation3<f64> {
        so3::project((r * so3::exp(&(self.omega(t + dt / 2.0) * dt))).matrix())
    }

    pub fn duration(&self) -> f64 {
        self.end
    }

    /// Body-frame angular rate.
    pub fn omega(&self, t: f64) -> Vector3<f64> {
        let s = self.segment(t);
        s.w + s.alpha * (t - s.t)
    }

    /// `(p, v, a)` of the continuous model.
    pub fn translation(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let s = self.segment(t);
        let d = t - s.t;
        let p = s.p + s.v * d + s.a * (d * d / 2.0) + s.jerk * (d * d * d / 6.0);
        let v = s.v + s.a * d + s.jerk * (d * d / 2.0);
        let a = s.a + s.jerk * d;
        (p, v, a)
    }

    pub fn rotation(&self, t: f64) -> Rotation3<f64> {
        let k = ((t / ROTATION_STEP).floor().max(0.0) as usize).min(self.rot_grid.len() - 1);
        let tk = k as f64 * ROTATION_STEP;
        let dt = t - tk;
        if dt.abs() < 1e-15 {
            self.rot_grid[k]
        } else {
            self.step(&self.rot_grid[k], tk, dt)
        }
    }

    pub fn state(&self, t: f64) -> TrueState {
        let (p, v, a) = self.translation(t);
        TrueState {
            t,
            p,
            v,
            a,
            r: self.rotation(t),
        }
    }
}

/// Ground truth sampled at the IMU ticks and at the pose times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub imu_states: Vec<TrueState>,
    pub pose_states: Vec<TrueState>,
}

fn imu_times(config: &ScenarioConfig) -> Vec<f64> {
    let n = (config.duration() * config.imu_rate).round() as usize;
    (0..=n).map(|i| i as f64 / config.imu_rate).collect()
}

pub fn generate(config: &ScenarioConfig) -> Result<Trajectory> {
    config.validate()?;
    let motion = Motion::new(config);
    let times = imu_times(config);
    match config.mode {
        SynthMode::Verification => {
            let ratio = (config.imu_rate / config.pose_rate).round() as usize;
            let mut imu_states = Vec::with_capacity(times.len());
            let (mut p, mut v, _) = motion.translation(0.0);
            for (i, &t) in times.iter().enumerate() {
                let (_, _, a) = motion.translation(t);
                imu_states.push(TrueState {
                    t,
                    p,
                    v,
                    a,
                    r: motion.rotation(t),
                });
                if let Some(&next) = times.get(i + 1) {
                    let h = next - t;
                    p += v * h + a * (h * h / 2.0);
                    v += a * h;
                }
            }
            let pose_states = imu_states.iter().step_by(ratio).copied().collect();
            Ok(Trajectory {
                imu_states,
                pose_states,
            })
        }
        SynthMode::Realistic => {
            let imu_states = times.iter().map(|&t| motion.state(t)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
            let end = motion.duration();
            let mut pose_states = Vec::new();
            for k in 0.. {
                let nominal = k as f64 / config.pose_rate;
                if nominal > end {
                    break;
                }
                let offset = if config.pose_jitter > 0.0 {
                    rng.random_range(0.0..config.pose_jitter)
                } else {
                    0.0
                };
                let t = nominal + offset;
                if t <= end {
                    pose_states.push(motion.state(t));
                }
            }
            Ok(Trajectory {
                imu_states,
                pose_states,
            })
        }
    }
}

fn drift(config: &ScenarioConfig, t: f64) -> Rotation3<f64> {
    if config.drift_pitch_deg == 0.0 {
        return Rotation3::identity();
    }
    let angle = config.drift_pitch_deg.to_radians() * t / config.duration();
    so3::exp(&(Vector3::y() * angle))
}

/// Applies the accelerometer model and measurement noise.
pub fn corrupt(
    trajectory: &Trajectory,
    config: &ScenarioConfig,
) -> (Vec<ImuSample>, Vec<PoseMeasurement>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s_inv = config
        .sensitivity()
        .try_inverse()
        .expect("validated sensitivity is invertible");
    let b = config.bias();
    let g = config.gravity();
    let accel_noise = Normal::new(0.0, config.sigma_a).expect("finite sigma");
    let imu = trajectory
        .imu_states
        .iter()
        .map(|s| {
            let w = Vector3::from_fn(|_, _| accel_noise.sample(&mut rng));
            let accel = s_inv * (s.r.inverse() * (s.a + g) + b + w);
            ImuSample {
                t: s.t,
                accel,
                orientation: config.imu_orientation.then(|| drift(config, s.t) * s.r),
            }
        })
        .collect();

    let var = config.sigma_p * config.sigma_p;
    let cov = Matrix3::from_diagonal(&Vector3::new(var * config.pose_anisotropy, var, var));
    let l = Matrix3::from_diagonal(&cov.diagonal().map(f64::sqrt));
    let poses = trajectory
        .pose_states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let d = drift(config, s.t);
            PoseMeasurement {
                t: s.t,
                position: d * s.p + l * z,
                orientation: d * s.r,
                position_cov: cov,
                keyframe: k % config.keyframe_every == 0,
            }
        })
        .collect();
    (imu, poses)
}

/// Generated measurements together with the truth at the pose times.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub imu: Vec<ImuSample>,
    pub poses: Vec<PoseMeasurement>,
    pub truth: Vec<TrueState>,
}

pub fn simulate(config: &ScenarioConfig) -> Result<Dataset> {
    let trajectory = generate(config)?;
    let (imu, poses) = corrupt(&trajectory, config);
    Ok(Dataset {
        config: config.clone(),
        imu,
        poses,
        truth: trajectory.pose_states,
    })
}

/// Inputs of the scenario library. Unset truths take the preset's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub preset: String,
    pub seed: u64,
    /// s; preset length when unset.
    pub duration: Option<f64>,
    pub imu_rate: f64,
    pub pose_rate: f64,
    pub sigma_a: f64,
    pub sigma_p: f64,
    pub pose_anisotropy: f64,
    pub mode: SynthMode,
    pub pose_jitter: f64,
    pub keyframe_every: usize,
    pub imu_orientation: bool,
    pub initial_velocity: [f64; 3],
    pub true_sensitivity: Option<[[f64; 3]; 3]>,
    pub true_bias: Option<[f64; 3]>,
    pub true_gravity: Option<[f64; 3]>,
    /// Drift for `drift_tilt`, degrees.
    pub drift_pitch_deg: f64,
    /// Scale of the jerk and angular acceleration of `excited`.
    pub excitation: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            preset: "excited".into(),
            seed: 0,
            duration: None,
            imu_rate: 100.0,
            pose_rate: 10.0,
            sigma_a: 0.05,
            sigma_p: 0.01,
            pose_anisotropy: 1.0,
            mode: SynthMode::Verification,
            pose_jitter: 0.002,
            keyframe_every: 10,
            imu_orientation: true,
            initial_velocity: [0.0; 3],
            true_sensitivity: None,
            true_bias: None,
            true_gravity: None,
            drift_pitch_deg: 3.0,
            excitation: 1.0,
        }
    }
}

impl ScenarioParams {
    pub fn preset(name: &str, seed: u64) -> Self {
        Self {
            preset: name.into(),
            seed,
            ..Self::default()
        }
    }

    pub fn noise_free(mut self) -> Self {
        self.sigma_a = 0.0;
        self.sigma_p = 0.0;
        self
    }
}

pub const SCENARIOS: [&str; 4] = ["static", "slow_yaw", "excited", "drift_tilt"];

pub fn scenario_library() -> &'static [&'static str] {
    &SCENARIOS
}

/// True intrinsics and gravity drawn the way `excited` draws them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomTruth {
    pub sensitivity: [[f64; 3]; 3],
    pub bias: [f64; 3],
    pub gravity: [f64; 3],
}

/// Bias in [−0.3, 0.3] m/s², sensitivity diagonal in [0.98, 1.02],
/// off-diagonal in [−0.01, 0.01] and gravity tilted by at most 3°.
pub fn random_truth(seed: u64) -> RandomTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let mut sensitivity = [[0.0; 3]; 3];
    for (r, row) in sensitivity.iter_mut().enumerate() {
        for (c, x) in row.iter_mut().enumerate() {
            *x = if r == c {
                rng.random_range(0.98..1.02)
            } else {
                rng.random_range(-0.01..0.01)
            };
        }
    }
    let bias = [0; 3].map(|_| rng.random_range(-0.3..0.3));
    let tilt = rng.random_range(0.0..3f64.to_radians());
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let axis = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0);
    let g = so3::exp(&(axis * tilt)) * Vector3::z() * STANDARD_GRAVITY;
    RandomTruth {
        sensitivity,
        bias,
        gravity: g.into(),
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Four segments whose jerk pattern `+ − − +` starts and ends at rest.
fn excursion(jerk: Vector3<f64>) -> [Vector3<f64>; 4] {
    [jerk, -jerk, -jerk, jerk]
}

fn excited_segments(duration: f64, scale: f64, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let jerk = 4.0 * scale;
    let alpha = 4.0 * scale;
    let mut segments = Vec::new();
    let blocks = (duration / (8.0 * SEGMENT)).ceil() as usize;
    for _ in 0..blocks {
        let dir = random_unit(rng) * jerk;
        let out = excursion(dir);
        let back = excursion(-dir);
        let jerks = out.iter().chain(&back);
        let (u1, u2) = (random_unit(rng) * alpha, random_unit(rng) * alpha);
        let alphas = excursion(u1).into_iter().chain(excursion(u2));
        for (j, a) in jerks.zip(alphas) {
            segments.push(Segment {
                duration: SEGMENT,
                jerk: (*j).into(),
                angular_accel: a.into(),
            });
        }
    }
    segments
}

/// Planar translation excursions with two 180° yaw turns and pauses.
fn slow_yaw_segments(duration: f64, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    const JERK: f64 = 0.5;
    let alpha = std::f64::consts::FRAC_PI_4;
    let turn: Vec<Segment> = [alpha, -alpha]
        .iter()
        .flat_map(|&a| {
            std::iter::repeat_n(
                Segment {
                    duration: SEGMENT,
                    jerk: [0.0; 3],
                    angular_accel: [0.0, 0.0, a],
                },
                4,
            )
        })
        .collect();
    let planar = |rng: &mut ChaCha8Rng| {
        let th = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = Vector3::new(th.cos(), th.sin(), 0.0) * JERK;
        excursion(dir)
            .into_iter()
            .chain(excursion(-dir))
            .map(|j| Segment {
                duration: SEGMENT,
                jerk: j.into(),
                angular_accel: [0.0; 3],
            })
            .collect::<Vec<_>>()
    };
    let pause = || Segment::still(2.0);
    let mut segments = vec![pause()];
    segments.extend(planar(rng));
    segments.extend(turn.iter().copied());
    segments.push(pause());
    segments.extend(planar(rng));
    segments.extend(turn.iter().copied());
    let mut t: f64 = segments.iter().map(|s| s.duration).sum();
    while t < duration - 1e-9 {
        let remaining = duration - t;
        if remaining >= 8.0 * SEGMENT + 2.0 {
            segments.push(pause());
            segments.extend(planar(rng));
            t += 2.0 + 8.0 * SEGMENT;
        } else {
            segments.push(Segment::still(remaining));
            t = duration;
        }
    }
    segments
}

/// Builds a library scenario.
pub fn scenario(params: &ScenarioParams) -> Result<ScenarioConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x2545_f491_4f6c_dd1d);
    let mut truth = RandomTruth {
        sensitivity: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        bias: [0.0; 3],
        gravity: [0.0, 0.0, STANDARD_GRAVITY],
    };
    let mut drift = 0.0;
    let segments = match params.preset.as_str() {
        "static" => vec![Segment::still(params.duration.unwrap_or(30.0))],
        "slow_yaw" => {
            truth.bias = [0.3; 3];
            slow_yaw_segments(params.duration.unwrap_or(60.0), &mut rng)
        }
        "excited" => {
            truth = random_truth(params.seed);
            excited_segments(params.duration.unwrap_or(120.0), params.excitation, &mut rng)
        }
        "drift_tilt" => {
            drift = params.drift_pitch_deg;
            slow_yaw_segments(params.duration.unwrap_or(60.0), &mut rng)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown scenario '{other}', expected one of {SCENARIOS:?}"
            )))
        }
    };
    if let Some(s) = params.true_sensitivity {
        truth.sensitivity = s;
    }
    if let Some(b) = params.true_bias {
        truth.bias = b;
    }
    if let Some(g) = params.true_gravity {
        truth.gravity = g;
    }
    let config = ScenarioConfig {
        name: params.preset.clone(),
        segments,
        imu_rate: params.imu_rate,
        pose_rate: params.pose_rate,
        sigma_a: params.sigma_a,
        sigma_p: params.sigma_p,
        pose_anisotropy: params.pose_anisotropy,
        true_s: truth.sensitivity,
        true_b: truth.bias,
        true_g: truth.gravity,
        initial_velocity: params.initial_velocity,
        seed: params.seed,
        mode: params.mode,
        pose_jitter: params.pose_jitter,
        keyframe_every: params.keyframe_every,
        imu_orientation: params.imu_orientation,
        drift_pitch_deg: drift,
    };
    config.validate()?;
    Ok(config)
}
