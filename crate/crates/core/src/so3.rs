//! Small SO(3) toolbox: exp/log, right-Jacobian inverse and interpolation.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn exp(phi: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::new(*phi)
}

pub fn log(r: &Rotation3<f64>) -> Vector3<f64> {
    r.scaled_axis()
}

/// Inverse of the right Jacobian of SO(3).
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let coef = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coef * k * k
}

/// Re-orthonormalizes a nearly orthogonal matrix.
pub fn project(m: &Matrix3<f64>) -> Rotation3<f64> {
    Rotation3::from_matrix_eps(m, 1e-15, 100, Rotation3::identity())
}

/// Spherical interpolation between `a` (at `s = 0`) and `b` (at `s = 1`).
pub fn slerp(a: &Rotation3<f64>, b: &Rotation3<f64>, s: f64) -> Rotation3<f64> {
    let delta = log(&(a.inverse() * b));
    a * exp(&(delta * s))
}

/// Distance of `m` from SO(3): `max(‖mᵀm − I‖_max, |det m − 1|)`.
pub fn orthogonality_error(m: &Matrix3<f64>) -> f64 {
    let e = (m.transpose() * m - Matrix3::identity()).amax();
    e.max((m.determinant() - 1.0).abs())
}

pub fn from_quaternion_wxyz(w: f64, x: f64, y: f64, z: f64) -> Rotation3<f64> {
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z)).to_rotation_matrix()
}

pub fn to_quaternion_wxyz(r: &Rotation3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
    [q.w, q.i, q.j, q.k]
}
