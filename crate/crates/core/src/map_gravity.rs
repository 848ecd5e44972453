//! Body-frame gravity factors for keyframes and a small orientation-only
//! alignment graph that removes roll/pitch drift from a map.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Estimate;
use crate::io::UpdateRecord;
use crate::nlls::{
    optimize, sqrt_info_from_cov, Factor, FactorGraph, Key, LmParams, OptimizeReport,
    Rot3Between, Rot3Prior, Values, Variable,
};
use crate::odometry::PoseMeasurement;
use crate::s2::{self, S2Point};
use crate::so3;

const NODE_TAG: char = 'r';

/// Orientation of one keyframe in the map frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeNode {
    pub id: u32,
    pub t: f64,
    pub r_m: Rotation3<f64>,
}

/// Measured relative rotation `R_fromᵀ R_to` between two keyframes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeRotation {
    pub from: u32,
    pub to: u32,
    pub measured: Rotation3<f64>,
    pub sigma: f64,
}

/// Odometry-frame gravity direction with its tangent covariance at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityEstimate {
    pub t: f64,
    pub direction: S2Point,
    pub cov: Matrix2<f64>,
}

impl From<&Estimate> for GravityEstimate {
    fn from(e: &Estimate) -> Self {
        Self {
            t: e.t,
            direction: e.gravity,
            cov: e.gravity_cov,
        }
    }
}

impl TryFrom<&UpdateRecord> for GravityEstimate {
    type Error = Error;

    fn try_from(r: &UpdateRecord) -> Result<Self> {
        Ok(Self {
            t: r.t,
            direction: S2Point::new(r.gravity_direction())
                .ok_or_else(|| Error::Mismatch(format!("record at t={} has no gravity direction", r.t)))?,
            cov: r.gravity_covariance(),
        })
    }
}

/// Gravity direction expressed in a keyframe's body frame, with its tangent covariance.
#[derive(Debug, Clone)]
pub struct BodyGravityFactor {
    keys: [Key; 1],
    pub mean_b: S2Point,
    pub cov_b: Matrix2<f64>,
    pub keyframe_id: u32,
    sqrt_info: DMatrix<f64>,
}

impl BodyGravityFactor {
    pub fn new(mean_b: S2Point, cov_b: Matrix2<f64>, keyframe_id: u32) -> Result<Self> {
        let sqrt_info = sqrt_info_from_cov(&DMatrix::from_column_slice(2, 2, cov_b.as_slice()))?;
        Ok(Self {
            keys: [node_key(keyframe_id)],
            mean_b,
            cov_b,
            keyframe_id,
            sqrt_info,
        })
    }

    /// Same mean with the covariance scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.mean_b, self.cov_b * factor, self.keyframe_id)
    }
}

impl Factor for BodyGravityFactor {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn linearize(&self, vars: &[&Variable]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let (e, j) = gravity_error(vars[0].as_rot3()?, self)?;
        Ok((
            DVector::from_column_slice(e.as_slice()),
            vec![DMatrix::from_column_slice(2, 3, j.as_slice())],
        ))
    }

    fn sqrt_info(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    fn kind(&self) -> &'static str {
        "body_gravity"
    }
}

pub fn node_key(id: u32) -> Key {
    Key::new(NODE_TAG, id)
}

/// Moves an odometry-frame gravity estimate into the body frame of a keyframe
/// with orientation `r_o`, carrying the tangent covariance through the
/// change of basis `J = B_{x̄_B}ᵀ R_Oᵀ B_{x̄_O}`.
pub fn capture_factor(
    gravity: &GravityEstimate,
    r_o: &Rotation3<f64>,
    keyframe_id: u32,
) -> Result<BodyGravityFactor> {
    let (gravity_o, cov_o) = (&gravity.direction, &gravity.cov);
    let mean_b = S2Point::new(r_o.inverse() * gravity_o.vector())
        .ok_or_else(|| Error::Config("degenerate gravity direction".into()))?;
    let b_o = s2::tangent_basis(gravity_o)?;
    let b_b = s2::tangent_basis(&mean_b)?;
    let j = b_b.matrix().transpose() * r_o.inverse().matrix() * b_o.matrix();
    let cov_b = j * cov_o * j.transpose();
    let cov_b = (cov_b + cov_b.transpose()) * 0.5;
    BodyGravityFactor::new(mean_b, cov_b, keyframe_id)
}

/// `local(x̄_B, R_Mᵀ e3)` and its Jacobian with respect to a right
/// perturbation `R_M Exp(φ)`.
pub fn gravity_error(
    r_m: &Rotation3<f64>,
    factor: &BodyGravityFactor,
) -> Result<(Vector2<f64>, Matrix2x3<f64>)> {
    let u = r_m.inverse() * Vector3::z();
    let up = S2Point::new(u).expect("rotated unit vector");
    let e = s2::local(&factor.mean_b, &up)?;
    let j = s2::local_ambient_jacobian_second(&factor.mean_b, &up)? * so3::skew(&u);
    Ok((e, j))
}

/// Angle between the body-frame vertical of two orientations, i.e. the
/// combined roll/pitch disagreement.
pub fn tilt_error(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    let ua = a.inverse() * Vector3::z();
    let ub = b.inverse() * Vector3::z();
    ua.cross(&ub).norm().atan2(ua.dot(&ub))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignParams {
    /// Standard deviation of each relative rotation constraint, degrees.
    pub relative_sigma_deg: f64,
    /// Yaw prior on the first keyframe. Gravity factors leave yaw free, so
    /// without it the yaw gauge is only fixed by the solver damping.
    pub yaw_anchor_sigma_deg: Option<f64>,
    /// Multiplies every gravity factor covariance. Values below one make
    /// gravity dominate the relative constraints.
    pub gravity_cov_scale: f64,
    pub solver: LmParams,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            relative_sigma_deg: 0.1,
            yaw_anchor_sigma_deg: Some(0.01),
            gravity_cov_scale: 1.0,
            solver: LmParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlignResult {
    pub nodes: Vec<KeyframeNode>,
    pub report: OptimizeReport,
}

/// Relative rotation constraints between consecutive nodes.
pub fn chain_constraints(nodes: &[KeyframeNode], sigma: f64) -> Vec<RelativeRotation> {
    nodes
        .windows(2)
        .map(|w| RelativeRotation {
            from: w[0].id,
            to: w[1].id,
            measured: w[0].r_m.inverse() * w[1].r_m,
            sigma,
        })
        .collect()
}

/// Optimizes keyframe orientations against relative rotation constraints and
/// body-frame gravity factors.
pub fn align_keyframes(
    nodes: &[KeyframeNode],
    constraints: &[RelativeRotation],
    gravity: &[BodyGravityFactor],
    params: &AlignParams,
) -> Result<AlignResult> {
    if nodes.is_empty() {
        return Err(Error::Config("no keyframes to align".into()));
    }
    if gravity.is_empty() {
        return Err(Error::Config("alignment needs at least one gravity factor".into()));
    }
    if !(params.gravity_cov_scale > 0.0) {
        return Err(Error::Config("gravity_cov_scale must be positive".into()));
    }
    let mut values = Values::new();
    for n in nodes {
        values.insert(node_key(n.id), Variable::Rot3(n.r_m));
    }
    let mut graph = FactorGraph::new();
    for c in constraints {
        let l = DMatrix::identity(3, 3) / c.sigma;
        graph.add(Rot3Between::new(node_key(c.from), node_key(c.to), c.measured, l));
    }
    for g in gravity {
        if !values.contains(&node_key(g.keyframe_id)) {
            return Err(Error::UnknownVariable(node_key(g.keyframe_id).to_string()));
        }
        graph.add(if params.gravity_cov_scale == 1.0 {
            g.clone()
        } else {
            g.scaled(params.gravity_cov_scale)?
        });
    }
    if let Some(sigma) = params.yaw_anchor_sigma_deg {
        let mut l = DMatrix::zeros(1, 3);
        l[(0, 2)] = 1.0 / sigma.to_radians();
        graph.add(Rot3Prior::new(node_key(nodes[0].id), nodes[0].r_m, l));
    }
    let report = optimize(&graph, &mut values, &params.solver)?;
    let out = nodes
        .iter()
        .map(|n| {
            Ok(KeyframeNode {
                r_m: *values.get(&node_key(n.id))?.as_rot3()?,
                ..*n
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignResult { nodes: out, report })
}

/// Builds keyframe nodes and gravity factors from an estimator run: each
/// keyframe pose is paired with the latest estimate published at or before it.
/// Keyframes preceding the first estimate get a node but no gravity factor.
pub fn capture_keyframes(
    poses: &[PoseMeasurement],
    estimates: &[GravityEstimate],
) -> Result<(Vec<KeyframeNode>, Vec<BodyGravityFactor>)> {
    let mut nodes = Vec::new();
    let mut factors = Vec::new();
    let mut next = 0;
    for (id, pose) in poses.iter().filter(|p| p.keyframe).enumerate() {
        let id = id as u32;
        while next < estimates.len() && estimates[next].t <= pose.t {
            next += 1;
        }
        nodes.push(KeyframeNode {
            id,
            t: pose.t,
            r_m: pose.orientation,
        });
        if next > 0 {
            factors.push(capture_factor(&estimates[next - 1], &pose.orientation, id)?);
        }
    }
    Ok((nodes, factors))
}

/// Total weighted cost of the alignment problem at the given orientations.
pub fn alignment_cost(
    nodes: &[KeyframeNode],
    constraints: &[RelativeRotation],
    gravity: &[BodyGravityFactor],
) -> Result<f64> {
    let mut values = Values::new();
    for n in nodes {
        values.insert(node_key(n.id), Variable::Rot3(n.r_m));
    }
    let mut graph = FactorGraph::new();
    for c in constraints {
        let l = DMatrix::identity(3, 3) / c.sigma;
        graph.add(Rot3Between::new(node_key(c.from), node_key(c.to), c.measured, l));
    }
    for g in gravity {
        graph.add(g.clone());
    }
    graph.total_cost(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlls::check::jacobian_relative_error;
    use proptest::prelude::*;

    fn est(direction: S2Point, cov: Matrix2<f64>) -> GravityEstimate {
        GravityEstimate { t: 0.0, direction, cov }
    }

    fn rot(x: f64, y: f64, z: f64) -> Rotation3<f64> {
        so3::exp(&Vector3::new(x, y, z))
    }

    #[test]
    fn identity_capture_keeps_mean_and_covariance() {
        let g = S2Point::from_xyz(0.1, -0.05, 1.0).unwrap();
        let cov = Matrix2::new(2e-4, 3e-5, 3e-5, 1e-4);
        let f = capture_factor(&est(g, cov), &Rotation3::identity(), 0).unwrap();
        assert!((f.mean_b.vector() - g.vector()).norm() < 1e-15);
        assert!((f.cov_b - cov).norm() < 1e-15);
    }

    #[test]
    fn yaw_capture_preserves_trace() {
        let g = S2Point::from_xyz(0.02, 0.03, 1.0).unwrap();
        let cov = Matrix2::new(4e-4, -1e-4, -1e-4, 1e-4);
        let r = rot(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let f = capture_factor(&est(g, cov), &r, 3).unwrap();
        assert!((f.mean_b.vector() - r.inverse() * g.vector()).norm() < 1e-14);
        assert!((f.cov_b.trace() - cov.trace()).abs() < 1e-10);
    }

    #[test]
    fn matching_orientation_has_zero_error() {
        let r = rot(0.3, -0.2, 1.0);
        let g = S2Point::ORIGIN;
        let f = capture_factor(&est(g, Matrix2::identity() * 1e-4), &r, 0).unwrap();
        let (e, _) = gravity_error(&r, &f).unwrap();
        assert!(e.norm() < 1e-12);
    }

    #[test]
    fn two_degree_roll_gives_two_degree_error() {
        let f = BodyGravityFactor::new(S2Point::ORIGIN, Matrix2::identity(), 0).unwrap();
        let r = rot(2f64.to_radians(), 0.0, 0.0);
        let (e, _) = gravity_error(&r, &f).unwrap();
        assert!((e.norm() - 2f64.to_radians()).abs() < 1e-8);
    }

    #[test]
    fn exact_inputs_are_a_fixed_point() {
        let truth: Vec<_> = (0..8).map(|i| rot(0.05 * i as f64, -0.02, 0.3 * i as f64)).collect();
        let nodes: Vec<_> = truth
            .iter()
            .enumerate()
            .map(|(i, r)| KeyframeNode { id: i as u32, t: i as f64, r_m: *r })
            .collect();
        let cons = chain_constraints(&nodes, 0.1f64.to_radians());
        let grav: Vec<_> = nodes
            .iter()
            .map(|n| capture_factor(&est(S2Point::ORIGIN, Matrix2::identity() * 1e-6), &n.r_m, n.id).unwrap())
            .collect();
        let out = align_keyframes(&nodes, &cons, &grav, &AlignParams::default()).unwrap();
        for (a, b) in out.nodes.iter().zip(&nodes) {
            assert!(so3::log(&(a.r_m.inverse() * b.r_m)).norm() < 1e-8);
        }
    }

    fn drifted_chain(weight: f64) -> (Vec<Rotation3<f64>>, Vec<KeyframeNode>, AlignResult) {
        let n = 20;
        let truth: Vec<_> = (0..n).map(|i| rot(0.0, 0.0, 0.2 * i as f64)).collect();
        let nodes: Vec<_> = truth
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let drift = rot(0.0, 3f64.to_radians() * i as f64 / (n - 1) as f64, 0.0);
                KeyframeNode { id: i as u32, t: i as f64, r_m: drift * r }
            })
            .collect();
        let cons = chain_constraints(&nodes, 0.1f64.to_radians());
        let grav: Vec<_> = truth
            .iter()
            .enumerate()
            .map(|(i, r)| {
                BodyGravityFactor::new(
                    S2Point::new(r.inverse() * Vector3::z()).unwrap(),
                    Matrix2::identity() * weight,
                    i as u32,
                )
                .unwrap()
            })
            .collect();
        let out = align_keyframes(&nodes, &cons, &grav, &AlignParams::default()).unwrap();
        let before = alignment_cost(&nodes, &cons, &grav).unwrap();
        let after = alignment_cost(&out.nodes, &cons, &grav).unwrap();
        assert!(after <= before + 1e-12);
        (truth, nodes, out)
    }

    #[test]
    fn tight_gravity_removes_pitch_drift() {
        let (truth, _, out) = drifted_chain(1e-8);
        for (t, n) in truth.iter().zip(&out.nodes) {
            assert!(tilt_error(t, &n.r_m).to_degrees() < 0.05);
        }
    }

    #[test]
    fn loose_gravity_leaves_orientations_alone() {
        let (_, nodes, out) = drifted_chain(1e6);
        for (a, b) in out.nodes.iter().zip(&nodes) {
            assert!(so3::log(&(a.r_m.inverse() * b.r_m)).norm() < 1e-4);
        }
    }

    fn arb_rot() -> impl Strategy<Value = Rotation3<f64>> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| rot(x, y, z))
    }

    fn arb_upper() -> impl Strategy<Value = S2Point> {
        (-0.8..0.8f64, -0.8..0.8f64).prop_map(|(x, y)| S2Point::from_xyz(x, y, 1.0).unwrap())
    }

    proptest! {
        #[test]
        fn captured_covariance_keeps_eigenvalues(
            g in arb_upper(),
            r in arb_rot(),
            a in 1e-6..1e-2f64,
            c in 1e-6..1e-2f64,
            rho in -0.9..0.9f64,
        ) {
            let off = rho * (a * c).sqrt();
            let cov = Matrix2::new(a, off, off, c);
            let f = match capture_factor(&est(g, cov), &r, 0) {
                Ok(f) => f,
                Err(Error::Antipode(_)) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            let mut e1: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
            let mut e2: Vec<f64> = f.cov_b.symmetric_eigenvalues().iter().copied().collect();
            e1.sort_by(f64::total_cmp);
            e2.sort_by(f64::total_cmp);
            prop_assert!(e2[0] >= -1e-12);
            for (x, y) in e1.iter().zip(&e2) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn capture_then_error_at_truth_is_zero(g in arb_upper(), r in arb_rot()) {
            // Map frame whose vertical is the odometry-frame gravity direction.
            let level = Rotation3::rotation_between(g.vector(), &Vector3::z()).unwrap();
            let f = match capture_factor(&est(g, Matrix2::identity() * 1e-4), &r, 0) {
                Ok(f) => f,
                Err(Error::Antipode(_)) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            let (e, _) = gravity_error(&(level * r), &f).unwrap();
            prop_assert!(e.norm() < 1e-9);
        }

        #[test]
        fn gravity_jacobian_matches_differences(r in arb_rot(), m in arb_upper()) {
            let f = BodyGravityFactor::new(m, Matrix2::identity(), 0).unwrap();
            let u = r.inverse() * Vector3::z();
            prop_assume!(u.dot(m.vector()) > -0.5);
            let v = Variable::Rot3(r);
            prop_assert!(jacobian_relative_error(&f, &[&v], 1e-6).unwrap() < 1e-5);
        }
    }
}
