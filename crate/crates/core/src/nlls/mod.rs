//! Dense manifold-aware nonlinear least squares.
//!
//! Variables are vectors, unit-sphere points or rotations; factors are
//! Gaussian with a square-root information matrix. The optimizer runs
//! Levenberg-Marquardt on the tangent-space normal equations and the graph
//! supports Schur-complement marginalization into a linear prior.

pub mod check;
mod factors;
mod linear;
mod marginal;
mod optimizer;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Rotation3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::s2::{self, S2Point};
use crate::so3;

pub use check::{jacobian_relative_error, numerical_jacobians};
pub use factors::{
    Rot3Between, Rot3Prior, S2Between, S2Prior, VectorBetween, VectorPrior,
};
pub use linear::EnvelopeCholesky;
pub use marginal::{marginalize, MarginalPrior};
pub use optimizer::{
    linearize_system, marginal_covariance, optimize, LmParams, OptimizeReport, Ordering, Status,
};

/// Variable key: an ASCII tag plus an index, ordered index-major so that
/// variables of the same time step sit next to each other.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key(u64);

impl Key {
    pub fn new(tag: char, index: u32) -> Self {
        debug_assert!(tag.is_ascii());
        Key(((index as u64) << 8) | (tag as u8 as u64))
    }

    pub fn tag(&self) -> char {
        (self.0 & 0xff) as u8 as char
    }

    pub fn index(&self) -> u32 {
        (self.0 >> 8) as u32
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.tag(), self.index())
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variable {
    Vector(DVector<f64>),
    S2(S2Point),
    /// Rotation with right-perturbation retraction `R Exp(δ)`.
    Rot3(Rotation3<f64>),
}

impl Variable {
    pub fn tangent_dim(&self) -> usize {
        match self {
            Variable::Vector(v) => v.len(),
            Variable::S2(_) => 2,
            Variable::Rot3(_) => 3,
        }
    }

    pub fn retract(&self, delta: &[f64]) -> Result<Variable> {
        debug_assert_eq!(delta.len(), self.tangent_dim());
        Ok(match self {
            Variable::Vector(v) => Variable::Vector(v + DVector::from_column_slice(delta)),
            Variable::S2(x) => Variable::S2(s2::retract(x, &Vector2::new(delta[0], delta[1]))?),
            Variable::Rot3(r) => {
                let d = Vector3::new(delta[0], delta[1], delta[2]);
                Variable::Rot3(so3::project((r * so3::exp(&d)).matrix()))
            }
        })
    }

    /// Tangent vector `δ` at `self` with `self.retract(δ) == other`.
    pub fn local(&self, other: &Variable) -> Result<DVector<f64>> {
        match (self, other) {
            (Variable::Vector(a), Variable::Vector(b)) if a.len() == b.len() => Ok(b - a),
            (Variable::S2(a), Variable::S2(b)) => {
                let l = s2::local(a, b)?;
                Ok(DVector::from_column_slice(l.as_slice()))
            }
            (Variable::Rot3(a), Variable::Rot3(b)) => {
                let l = so3::log(&(a.inverse() * b));
                Ok(DVector::from_column_slice(l.as_slice()))
            }
            _ => Err(Error::VariableKind("local between mismatched variables".into())),
        }
    }

    /// Derivative of `self.local(other)` with respect to a tangent perturbation of `other`.
    pub fn local_jacobian(&self, other: &Variable) -> Result<DMatrix<f64>> {
        match (self, other) {
            (Variable::Vector(a), Variable::Vector(_)) => Ok(DMatrix::identity(a.len(), a.len())),
            (Variable::S2(a), Variable::S2(b)) => {
                let (_, d2) = s2::local_jacobians(a, b)?;
                Ok(DMatrix::from_column_slice(2, 2, d2.as_slice()))
            }
            (Variable::Rot3(a), Variable::Rot3(b)) => {
                let j = so3::right_jacobian_inv(&so3::log(&(a.inverse() * b)));
                Ok(DMatrix::from_column_slice(3, 3, j.as_slice()))
            }
            _ => Err(Error::VariableKind("local between mismatched variables".into())),
        }
    }

    pub fn as_vector(&self) -> Result<&DVector<f64>> {
        match self {
            Variable::Vector(v) => Ok(v),
            _ => Err(Error::VariableKind("expected a vector variable".into())),
        }
    }

    pub fn as_s2(&self) -> Result<&S2Point> {
        match self {
            Variable::S2(x) => Ok(x),
            _ => Err(Error::VariableKind("expected an S2 variable".into())),
        }
    }

    pub fn as_rot3(&self) -> Result<&Rotation3<f64>> {
        match self {
            Variable::Rot3(r) => Ok(r),
            _ => Err(Error::VariableKind("expected a rotation variable".into())),
        }
    }
}

/// Current estimates keyed by [`Key`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Values(BTreeMap<Key, Variable>);

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: Key, value: Variable) -> Option<Variable> {
        self.0.insert(key, value)
    }

    pub fn remove(&mut self, key: &Key) -> Option<Variable> {
        self.0.remove(key)
    }

    pub fn get(&self, key: &Key) -> Result<&Variable> {
        self.0
            .get(key)
            .ok_or_else(|| Error::UnknownVariable(key.to_string()))
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.0.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.0.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Variable)> {
        self.0.iter()
    }

    pub fn gather(&self, keys: &[Key]) -> Result<Vec<&Variable>> {
        keys.iter().map(|k| self.get(k)).collect()
    }
}

/// A Gaussian factor over tangent-space perturbations of its variables.
pub trait Factor: fmt::Debug + Send + Sync {
    fn keys(&self) -> &[Key];

    /// Unwhitened error and one Jacobian per key, each `dim × tangent_dim`.
    fn linearize(&self, vars: &[&Variable]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)>;

    fn error(&self, vars: &[&Variable]) -> Result<DVector<f64>> {
        Ok(self.linearize(vars)?.0)
    }

    /// Square-root information `L` with `LᵀL = Σ⁻¹`.
    fn sqrt_info(&self) -> &DMatrix<f64>;

    fn kind(&self) -> &'static str {
        "factor"
    }
}

/// `½‖L e‖²` at `values`.
pub fn factor_cost(factor: &dyn Factor, values: &Values) -> Result<f64> {
    let vars = values.gather(factor.keys())?;
    let e = factor.error(&vars)?;
    Ok(0.5 * (factor.sqrt_info() * e).norm_squared())
}

/// Square-root information `L⁻¹` of a covariance `Σ = L Lᵀ`.
pub fn sqrt_info_from_cov(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonPsd("covariance is not positive definite".into()))?;
    let l = chol.l();
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::NonPsd("covariance factor is singular".into()))
}

pub fn sqrt_info_from_sigmas(sigmas: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        sigmas.len(),
        sigmas.iter().map(|s| 1.0 / s),
    ))
}

#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    factors: Vec<Arc<dyn Factor>>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<F: Factor + 'static>(&mut self, factor: F) {
        self.factors.push(Arc::new(factor));
    }

    pub fn add_shared(&mut self, factor: Arc<dyn Factor>) {
        self.factors.push(factor);
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factors(&self) -> &[Arc<dyn Factor>] {
        &self.factors
    }

    pub fn count_kind(&self, kind: &str) -> usize {
        self.factors.iter().filter(|f| f.kind() == kind).count()
    }

    /// Removes and returns every factor connected to any of `keys`.
    pub fn remove_touching(&mut self, keys: &[Key]) -> Vec<Arc<dyn Factor>> {
        let (removed, kept) = std::mem::take(&mut self.factors)
            .into_iter()
            .partition(|f| f.keys().iter().any(|k| keys.contains(k)));
        self.factors = kept;
        removed
    }

    pub fn total_cost(&self, values: &Values) -> Result<f64> {
        self.factors
            .iter()
            .map(|f| factor_cost(f.as_ref(), values))
            .sum()
    }
}
