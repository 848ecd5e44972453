//! Unit-sphere manifold used for the gravity direction.
//!
//! The chart origin is `e3` with tangent basis `[e1 e2]`. Every other point
//! `x` gets its own chart through the shortest rotation `R(x)` taking `e3`
//! onto `x`, which gives
//!
//! ```text
//! retract(x, t) = R(x) · Exp_e3(t)
//! local(x, y)   = Log_e3(R(x)ᵀ · y)
//! B_x           = R(x) · [e1 e2]
//! ```
//!
//! Charts break down at `-e3`; any evaluation within [`ANTIPODE_GUARD`]
//! radians of it returns [`Error::Antipode`].

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angular distance from `-e3` inside which the charts are refused.
pub const ANTIPODE_GUARD: f64 = 1e-3;

const SMALL_ANGLE: f64 = 1e-9;

/// Two-dimensional tangent perturbation, in radians along geodesic coordinates.
pub type TangentVec2 = Vector2<f64>;

/// A unit vector in ℝ³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 3]", try_from = "[f64; 3]")]
pub struct S2Point(Vector3<f64>);

impl S2Point {
    /// Chart origin `e3`.
    pub const ORIGIN: S2Point = S2Point(Vector3::new(0.0, 0.0, 1.0));

    /// Normalizes `v`; returns `None` for (near) zero or non-finite input.
    pub fn new(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-300 {
            return None;
        }
        Some(Self(v / n))
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Option<Self> {
        Self::new(Vector3::new(x, y, z))
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Vector3<f64> {
        self.0
    }

    /// Geodesic angle to `other`, in radians.
    pub fn angle_to(&self, other: &S2Point) -> f64 {
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0))
    }

    fn check_chart(&self) -> Result<()> {
        if self.0.z <= -ANTIPODE_GUARD.cos() {
            Err(Error::Antipode([self.0.x, self.0.y, self.0.z]))
        } else {
            Ok(())
        }
    }
}

impl From<S2Point> for [f64; 3] {
    fn from(p: S2Point) -> Self {
        [p.0.x, p.0.y, p.0.z]
    }
}

impl TryFrom<[f64; 3]> for S2Point {
    type Error = String;

    fn try_from(v: [f64; 3]) -> std::result::Result<Self, Self::Error> {
        S2Point::new(Vector3::from(v)).ok_or_else(|| format!("cannot normalize {v:?}"))
    }
}

/// Orthonormal basis of the tangent plane at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentBasis(Matrix3x2<f64>);

impl TangentBasis {
    pub fn matrix(&self) -> &Matrix3x2<f64> {
        &self.0
    }
}

fn origin_basis() -> Matrix3x2<f64> {
    Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `Exp_e3(t) = cos‖t‖ e3 + sin‖t‖ [e1 e2] t/‖t‖`.
pub fn exp_at_origin(t: &TangentVec2) -> S2Point {
    let theta = t.norm();
    let sinc = if theta < SMALL_ANGLE {
        1.0 - theta * theta / 6.0
    } else {
        theta.sin() / theta
    };
    let v = Vector3::new(t.x * sinc, t.y * sinc, theta.cos());
    S2Point(v.normalize())
}

/// `Log_e3(x) = arccos(e3·x) v/‖v‖` with `v = [e1 e2]ᵀ x`.
pub fn log_at_origin(x: &S2Point) -> Result<TangentVec2> {
    x.check_chart()?;
    let v = Vector2::new(x.0.x, x.0.y);
    let s = v.norm();
    let theta = s.atan2(x.0.z);
    let ratio = if s < SMALL_ANGLE {
        1.0 + s * s / 6.0
    } else {
        theta / s
    };
    Ok(v * ratio)
}

/// Shortest rotation taking `e3` onto `x`:
/// `R = I + [k]× + [k]×² / (1 + c)` with `k = e3 × x`, `c = e3 · x`.
pub fn rotation_to(x: &S2Point) -> Result<Matrix3<f64>> {
    x.check_chart()?;
    Ok(rotation_formula(&x.0))
}

fn rotation_formula(x: &Vector3<f64>) -> Matrix3<f64> {
    let k = Vector3::new(-x.y, x.x, 0.0);
    let kx = skew(&k);
    Matrix3::identity() + kx + kx * kx / (1.0 + x.z)
}

/// Directional derivative of the `rotation_to` formula at `x` along `dx`.
pub fn rotation_to_derivative(x: &S2Point, dx: &Vector3<f64>) -> Result<Matrix3<f64>> {
    x.check_chart()?;
    let k = Vector3::new(-x.0.y, x.0.x, 0.0);
    let dk = Vector3::new(-dx.y, dx.x, 0.0);
    let kx = skew(&k);
    let dkx = skew(&dk);
    let denom = 1.0 + x.0.z;
    Ok(dkx + (dkx * kx + kx * dkx) / denom - kx * kx * (dx.z / (denom * denom)))
}

pub fn retract(x: &S2Point, t: &TangentVec2) -> Result<S2Point> {
    let r = rotation_to(x)?;
    let e = exp_at_origin(t);
    Ok(S2Point((r * e.0).normalize()))
}

pub fn local(x1: &S2Point, x2: &S2Point) -> Result<TangentVec2> {
    let r = rotation_to(x1)?;
    let y = S2Point((r.transpose() * x2.0).normalize());
    log_at_origin(&y)
}

/// `B_x = R(x) [e1 e2]`.
pub fn tangent_basis(x: &S2Point) -> Result<TangentBasis> {
    Ok(TangentBasis(rotation_to(x)? * origin_basis()))
}

/// Derivative of `Log_e3` at `x` with respect to tangent perturbations
/// expressed in `B_x`. Radially the map has unit gain; tangentially it is
/// stretched by `θ / sin θ`.
pub fn log_jacobian_at_origin(x: &S2Point) -> Result<Matrix2<f64>> {
    x.check_chart()?;
    let v = Vector2::new(x.0.x, x.0.y);
    let s2 = v.norm_squared();
    let s = s2.sqrt();
    if s < SMALL_ANGLE {
        return Ok(Matrix2::identity());
    }
    let theta = s.atan2(x.0.z);
    let p = Matrix2::new(v.x, -v.y, v.y, v.x);
    let d = Matrix2::new(1.0, 0.0, 0.0, theta / s);
    Ok(p * d * p.transpose() / s2)
}

/// Derivative of `Log_e3` at `y` with respect to an ambient tangent vector at `y`.
pub fn log_ambient_jacobian(y: &S2Point) -> Result<Matrix2x3<f64>> {
    let b = tangent_basis(y)?;
    Ok(log_jacobian_at_origin(y)? * b.0.transpose())
}

/// Derivative of `local(x1, ·)` at `x2` with respect to an ambient tangent vector at `x2`.
pub fn local_ambient_jacobian_second(x1: &S2Point, x2: &S2Point) -> Result<Matrix2x3<f64>> {
    let rt = rotation_to(x1)?.transpose();
    let y = S2Point((rt * x2.0).normalize());
    Ok(log_ambient_jacobian(&y)? * rt)
}

/// Exact Jacobians of `local(x1, x2)` with respect to tangent perturbations
/// of `x1` (in `B_x1`) and `x2` (in `B_x2`).
pub fn local_jacobians(x1: &S2Point, x2: &S2Point) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    let r1 = rotation_to(x1)?;
    let rt = r1.transpose();
    let y = S2Point((rt * x2.0).normalize());
    let dlog = log_ambient_jacobian(&y)?;

    let b1 = r1 * origin_basis();
    let mut dy_dx1 = Matrix3x2::zeros();
    for j in 0..2 {
        let dr = rotation_to_derivative(x1, &b1.column(j).into_owned())?;
        dy_dx1.set_column(j, &(dr.transpose() * x2.0));
    }
    let b2 = tangent_basis(x2)?;
    Ok((dlog * dy_dx1, dlog * rt * b2.0))
}

/// First-order approximation `(-I, I)` of [`local_jacobians`], adequate when
/// both points are within a few degrees of each other.
pub fn local_jacobians_approx() -> (Matrix2<f64>, Matrix2<f64>) {
    (-Matrix2::identity(), Matrix2::identity())
}
