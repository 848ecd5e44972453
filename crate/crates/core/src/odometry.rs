//! Velocity-agnostic odometry factor.
//!
//! Three position measurements `p⁰, pᵏ, pⁿ` and the accelerometer samples
//! between them give two double-integration identities that share the
//! unknown initial velocity. Eliminating it leaves a measurement that is
//! linear in the sensitivity matrix, the bias and the gravity vector:
//!
//! ```text
//! M_s s + M_b b + M_g g − (γ₁p̃⁰ + γ₂p̃ᵏ + γ₃p̃ⁿ) = w,   w ~ N(0, Σ)
//! ```
//!
//! Acceleration is held constant between consecutive samples (zero-order
//! hold); `s` is the row-major vectorization of `S`, so `S ã = (I₃ ⊗ ãᵀ) s`.

use nalgebra::{Matrix3, Matrix3x2, Rotation3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::s2::{self, S2Point};
use crate::so3;

/// Standard gravitational acceleration, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

pub type Matrix3x9 = SMatrix<f64, 3, 9>;
pub type Vector9 = SVector<f64, 9>;

/// Raw accelerometer sample (specific force in the body frame).
///
/// `orientation` is the body-to-inertial rotation at `t` when the host
/// odometry provides one; otherwise it is interpolated from the poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vector3<f64>,
    pub orientation: Option<Rotation3<f64>>,
}

impl ImuSample {
    pub fn new(t: f64, accel: Vector3<f64>) -> Self {
        Self {
            t,
            accel,
            orientation: None,
        }
    }
}

/// Pose measurement from the host odometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseMeasurement {
    pub t: f64,
    pub position: Vector3<f64>,
    /// Body-to-inertial orientation, treated as exact.
    pub orientation: Rotation3<f64>,
    /// Position covariance, m².
    pub position_cov: Matrix3<f64>,
    pub keyframe: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationCoefficients {
    /// Per-sample weights of `pᵏ − p⁰`, s².
    pub alpha_a: Vec<f64>,
    /// Per-sample weights of `pⁿ − p⁰`, s².
    pub alpha_b: Vec<f64>,
    pub beta_a: f64,
    pub beta_b: f64,
    /// `α_B/β_B − α_A/β_A`, s.
    pub alpha_c: Vec<f64>,
    /// `(β_A⁻¹ − β_B⁻¹, −β_A⁻¹, β_B⁻¹)`, 1/s.
    pub gamma: [f64; 3],
}

fn zoh_weights(times: &[f64], t0: f64, t: f64) -> Vec<f64> {
    (0..times.len())
        .map(|i| {
            let lo = times[i].max(t0);
            let hi = times.get(i + 1).copied().unwrap_or(f64::INFINITY).min(t);
            if hi > lo {
                // ∫_lo^hi (t − u) du
                0.5 * (hi - lo) * ((t - lo) + (t - hi))
            } else {
                0.0
            }
        })
        .collect()
}

/// Double-integration coefficients of the zero-order-hold acceleration model.
///
/// Sample `i` holds over `[τᵢ, τᵢ₊₁)`, clipped to `[t0, tn]`.
pub fn integration_coefficients(
    imu_times: &[f64],
    t0: f64,
    tk: f64,
    tn: f64,
) -> Result<IntegrationCoefficients> {
    if !(t0 < tk && tk < tn) {
        return Err(Error::Config(format!(
            "pose times must be strictly increasing, got {t0}, {tk}, {tn}"
        )));
    }
    let (first, last) = match (imu_times.first(), imu_times.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::Coverage { start: t0, end: tn }),
    };
    if first > t0 || last < tn {
        return Err(Error::Coverage { start: t0, end: tn });
    }
    let alpha_a = zoh_weights(imu_times, t0, tk);
    let alpha_b = zoh_weights(imu_times, t0, tn);
    let beta_a = tk - t0;
    let beta_b = tn - t0;
    let alpha_c = alpha_a
        .iter()
        .zip(&alpha_b)
        .map(|(a, b)| b / beta_b - a / beta_a)
        .collect();
    let gamma = [1.0 / beta_a - 1.0 / beta_b, -1.0 / beta_a, 1.0 / beta_b];
    Ok(IntegrationCoefficients {
        alpha_a,
        alpha_b,
        beta_a,
        beta_b,
        alpha_c,
        gamma,
    })
}

/// Linear measurement on `(s, b, g)` built from one pose triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryFactor {
    pub m_s: Matrix3x9,
    pub m_b: Matrix3<f64>,
    pub m_g: Matrix3<f64>,
    /// `γ₁p̃⁰ + γ₂p̃ᵏ + γ₃p̃ⁿ`, m/s².
    pub pos_term: Vector3<f64>,
    pub sigma: Matrix3<f64>,
    /// Index of the interval the factor constrains.
    pub interval_id: u32,
    /// Time of the newest pose of the triplet.
    pub t: f64,
    pub gravity_magnitude: f64,
}

fn check_psd(m: &Matrix3<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1e-300);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(Error::NonPsd(format!("{what} is not symmetric")));
    }
    let min_eig = m.symmetric_eigenvalues().min();
    if min_eig < -1e-12 * scale.max(1.0) {
        return Err(Error::NonPsd(format!(
            "{what} has negative eigenvalue {min_eig:e}"
        )));
    }
    Ok(())
}

/// Builds the factor from a pose triplet and the samples spanning it.
///
/// `imu` must be time ordered, start at or before `poses[0].t` and end at or
/// after `poses[2].t`; `orientations[i]` is the orientation at `imu[i].t`.
pub fn build_factor(
    poses: &[PoseMeasurement; 3],
    imu: &[ImuSample],
    orientations: &[Rotation3<f64>],
    sigma_a: f64,
) -> Result<OdometryFactor> {
    if imu.len() != orientations.len() {
        return Err(Error::Mismatch(format!(
            "{} IMU samples but {} orientations",
            imu.len(),
            orientations.len()
        )));
    }
    for (i, p) in poses.iter().enumerate() {
        check_psd(&p.position_cov, &format!("position covariance of pose {i}"))?;
    }
    let times: Vec<f64> = imu.iter().map(|s| s.t).collect();
    let coeffs = integration_coefficients(&times, poses[0].t, poses[1].t, poses[2].t)?;

    let mut m_s = Matrix3x9::zeros();
    let mut m_b = Matrix3::zeros();
    let mut sum_c = 0.0;
    let mut sum_c2 = 0.0;
    for ((sample, rot), &c) in imu.iter().zip(orientations).zip(&coeffs.alpha_c) {
        if c == 0.0 {
            continue;
        }
        let r = rot.matrix();
        for row in 0..3 {
            for col in 0..3 {
                let w = c * sample.accel[col];
                for k in 0..3 {
                    m_s[(k, 3 * row + col)] += w * r[(k, row)];
                }
            }
        }
        m_b -= r * c;
        sum_c += c;
        sum_c2 += c * c;
    }
    let m_g = -Matrix3::identity() * sum_c;

    let [g1, g2, g3] = coeffs.gamma;
    let p0 = poses[0].position;
    // γ₁ + γ₂ + γ₃ = 0, so positions relative to p⁰ give the same term.
    let pos_term = (poses[1].position - p0) * g2 + (poses[2].position - p0) * g3;
    let sigma = Matrix3::identity() * (sigma_a * sigma_a * sum_c2)
        + poses[0].position_cov * (g1 * g1)
        + poses[1].position_cov * (g2 * g2)
        + poses[2].position_cov * (g3 * g3);
    if sigma.cholesky().is_none() {
        return Err(Error::NonPsd(
            "odometry factor covariance is not positive definite".into(),
        ));
    }
    Ok(OdometryFactor {
        m_s,
        m_b,
        m_g,
        pos_term,
        sigma,
        interval_id: 0,
        t: poses[2].t,
        gravity_magnitude: STANDARD_GRAVITY,
    })
}

impl OdometryFactor {
    pub fn with_gravity_magnitude(mut self, magnitude: f64) -> Self {
        self.gravity_magnitude = magnitude;
        self
    }

    /// `M_s s + M_b b + M_g (|g| x) − pos_term`, m/s².
    pub fn residual(&self, s: &Vector9, b: &Vector3<f64>, g: &S2Point) -> Vector3<f64> {
        self.m_s * s + self.m_b * b + self.m_g * (g.vector() * self.gravity_magnitude)
            - self.pos_term
    }

    /// Jacobians with respect to `s`, `b` and a tangent perturbation of `g` in `B_g`.
    pub fn jacobians(&self, g: &S2Point) -> Result<(Matrix3x9, Matrix3<f64>, Matrix3x2<f64>)> {
        let basis = s2::tangent_basis(g)?;
        Ok((
            self.m_s,
            self.m_b,
            self.m_g * basis.matrix() * self.gravity_magnitude,
        ))
    }
}

fn interpolate_accel(a: &ImuSample, b: &ImuSample, t: f64) -> Vector3<f64> {
    if b.t <= a.t {
        return a.accel;
    }
    let s = (t - a.t) / (b.t - a.t);
    a.accel + (b.accel - a.accel) * s
}

fn orientation_from_poses(poses: &[PoseMeasurement; 3], t: f64) -> Rotation3<f64> {
    let (a, b) = if t <= poses[1].t {
        (&poses[0], &poses[1])
    } else {
        (&poses[1], &poses[2])
    };
    let s = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
    so3::slerp(&a.orientation, &b.orientation, s)
}

/// Selects the samples used by one factor: a sample at `t⁰`, every sample
/// strictly inside `(t⁰, tⁿ)` and a sample at `tⁿ`. Boundary samples that do
/// not fall on an IMU tick are linearly interpolated. Orientations come from
/// the samples when all of them carry one and are otherwise slerped between
/// the bracketing poses.
pub fn prepare_samples(
    poses: &[PoseMeasurement; 3],
    imu: &[ImuSample],
) -> Result<(Vec<ImuSample>, Vec<Rotation3<f64>>)> {
    let (t0, tn) = (poses[0].t, poses[2].t);
    let coverage = Error::Coverage { start: t0, end: tn };
    // Index of the last sample at or before t0.
    let start = match imu.partition_point(|s| s.t <= t0) {
        0 => return Err(coverage),
        n => n - 1,
    };
    // Index of the first sample at or after tn.
    let end = imu.partition_point(|s| s.t < tn);
    if end >= imu.len() {
        return Err(coverage);
    }
    let span = &imu[start..=end];
    let use_imu_orientation = span.iter().all(|s| s.orientation.is_some());

    let boundary = |t: f64, pose: &PoseMeasurement| -> (ImuSample, Rotation3<f64>) {
        let i = imu.partition_point(|s| s.t <= t);
        let (a, b) = (&imu[i.saturating_sub(1)], &imu[i.min(imu.len() - 1)]);
        let exact = if a.t == t {
            Some(a)
        } else if b.t == t {
            Some(b)
        } else {
            None
        };
        let accel = exact.map_or_else(|| interpolate_accel(a, b, t), |s| s.accel);
        let rot = if use_imu_orientation {
            match exact {
                Some(s) => s.orientation.unwrap(),
                None => {
                    let s = (t - a.t) / (b.t - a.t);
                    so3::slerp(&a.orientation.unwrap(), &b.orientation.unwrap(), s)
                }
            }
        } else {
            pose.orientation
        };
        (
            ImuSample {
                t,
                accel,
                orientation: Some(rot),
            },
            rot,
        )
    };

    let mut samples = Vec::with_capacity(span.len() + 2);
    let mut rots = Vec::with_capacity(span.len() + 2);
    let (s0, r0) = boundary(t0, &poses[0]);
    samples.push(s0);
    rots.push(r0);
    for s in span.iter().filter(|s| s.t > t0 && s.t < tn) {
        let r = if use_imu_orientation {
            s.orientation.unwrap()
        } else {
            orientation_from_poses(poses, s.t)
        };
        samples.push(*s);
        rots.push(r);
    }
    let (sn, rn) = boundary(tn, &poses[2]);
    samples.push(sn);
    rots.push(rn);
    Ok((samples, rots))
}

/// Accelerometer model inverted for the inertial acceleration:
/// `a_I = R (S ã − b) − g`.
pub fn invert_accel_model(
    accel: &Vector3<f64>,
    rotation: &Rotation3<f64>,
    sensitivity: &Matrix3<f64>,
    bias: &Vector3<f64>,
    gravity: &Vector3<f64>,
) -> Vector3<f64> {
    rotation * (sensitivity * accel - bias) - gravity
}

/// Forward accelerometer model without noise: `ã = S⁻¹ (Rᵀ (a_I + g) + b)`.
pub fn forward_accel_model(
    accel_inertial: &Vector3<f64>,
    rotation: &Rotation3<f64>,
    sensitivity: &Matrix3<f64>,
    bias: &Vector3<f64>,
    gravity: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let f = rotation.inverse() * (accel_inertial + gravity) + bias;
    sensitivity.lu().solve(&f)
}

/// Row-major vectorization of a 3×3 matrix.
pub fn vectorize(m: &Matrix3<f64>) -> Vector9 {
    Vector9::from_iterator((0..9).map(|i| m[(i / 3, i % 3)]))
}

pub fn unvectorize(s: &Vector9) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| s[3 * r + c])
}
