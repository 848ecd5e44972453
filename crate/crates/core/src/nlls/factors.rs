//! Generic priors and between-factors for the three variable kinds.

use nalgebra::{DMatrix, DVector, Matrix2, Rotation3};

use super::{Factor, Key, Variable};
use crate::error::Result;
use crate::s2::{self, S2Point};
use crate::so3;

fn dmat2(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 2, m.as_slice())
}

/// `e = x − μ`.
#[derive(Debug, Clone)]
pub struct VectorPrior {
    keys: [Key; 1],
    mean: DVector<f64>,
    sqrt_info: DMatrix<f64>,
}

impl VectorPrior {
    pub fn new(key: Key, mean: DVector<f64>, sqrt_info: DMatrix<f64>) -> Self {
        assert_eq!(sqrt_info.ncols(), mean.len());
        Self { keys: [key], mean, sqrt_info }
    }
}

impl Factor for VectorPrior {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn linearize(&self, vars: &[&Variable]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let x = vars[0].as_vector()?;
        let n = x.len();
        Ok((x - &self.mean, vec![DMatrix::identity(n, n)]))
    }

    fn sqrt_info(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    fn kind(&self) -> &'static str {
        "vector_prior"
    }
}

/// Random-walk link `e = x_b − x_a`.
#[derive(Debug, Clone)]
pub struct VectorBetween {
    keys: [Key; 2],
    sqrt_info: DMatrix<f64>,
}

impl VectorBetween {
    pub fn new(a: Key, b: Key, sqrt_info: DMatrix<f64>) -> Self {
        Self { keys: [a, b], sqrt_info }
    }
}

impl Factor for VectorBetween {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn linearize(&self, vars: &[&Variable]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let a = vars[0].as_vector()?;
        let b = vars[1].as_vector()?;
        let n = a.len();
        let id = DMatrix::<f64>::identity(n, n);
        Ok((b - a, vec![-&id, id]))
    }

    fn sqrt_info(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    fn kind(&self) -> &'static str {
        "vector_between"
    }
}

/// Prior on a sphere point, `e = −Log_x(μ)`.
#[derive(Debug, Clone)]
pub struct S2Prior {
    keys: [Key; 1],
    mean: S2Point,
    sqrt_info: DMatrix<f64>,
    exact: bool,
}

impl S2Prior {
    /// With `exact == false` the Jacobian is the identity.
    pub fn new(key: Key, mean: S2Point, sqrt_info: DMatrix<f64>, exact: bool) -> Self {
        assert_eq!(sqrt_info.ncols(), 2);
        Self { keys: [key], mean, sqrt_info, exact }
    }

    pub fn mean(&self) -> &S2Point {
        &self.mean
    }
}

impl Factor for S2Prior {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn linearize(&self, vars: &[&Variable]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let x = vars[0].as_s2()?;
        let e = -s2::local(x, &self.mean)?;
        let jac = if self.exact {
            let (d1, _) = s2::local_jacobians(x, &self.mean)?;
            -d1
        } else {
            Matrix2::identity()
        };
        Ok((DVector::from_column_slice(e.as_slice()), vec![dmat2(&jac)]))
    }

    fn sqrt_info(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    fn kind(&self) -> &'static str {
        "s2_prior"
    }
}

/// Diffusion between two sphere points, `e = Log_{x_a}(x_b)`.
#[derive(Debug, Clone)]
pub struct S2Between {
    keys: [Key; 2],
    sqrt_info: DMatrix<f64>,
    exact: bool,
}

impl S2Between {
    /// With `exact == false` the Jacobians are `(−I, I)`.
    pub fn new(a: Key, b: Key, sqrt_info: DMatrix<f64>, exact: bool) -> Self {
        assert_eq!(sqrt_info.ncols(), 2);
        Self { keys: [a, b], sqrt_info, exact }
    }
}

impl Factor for S2Between {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn linearize(&self, vars: &[&Variable]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let a = vars[0].as_s2()?;
        let b = vars[1].as_s2()?;
        let e = s2::local(a, b)?;
        let (d1, d2) = if self.exact {
            s2::local_jacobians(a, b)?
        } else {
            s2::local_jacobians_approx()
        };
        Ok((
            DVector::from_column_slice(e.as_slice()),
            vec![dmat2(&d1), dmat2(&d2)],
        ))
    }

    fn sqrt_info(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    fn kind(&self) -> &'static str {
        "s2_between"
    }
}

/// Prior on a rotation, `e = Log(μᵀ R)`. The square-root information may
/// have fewer than three rows to constrain only some directions.
#[derive(Debug, Clone)]
pub struct Rot3Prior {
    keys: [Key; 1],
    mean: Rotation3<f64>,
    sqrt_info: DMatrix<f64>,
}

impl Rot3Prior {
    pub fn new(key: Key, mean: Rotation3<f64>, sqrt_info: DMatrix<f64>) -> Self {
        assert_eq!(sqrt_info.ncols(), 3);
        Self { keys: [key], mean, sqrt_info }
    }
}

impl Factor for Rot3Prior {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn linearize(&self, vars: &[&Variable]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let r = vars[0].as_rot3()?;
        let e = so3::log(&(self.mean.inverse() * r));
        let j = so3::right_jacobian_inv(&e);
        Ok((
            DVector::from_column_slice(e.as_slice()),
            vec![DMatrix::from_column_slice(3, 3, j.as_slice())],
        ))
    }

    fn sqrt_info(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    fn kind(&self) -> &'static str {
        "rot3_prior"
    }
}

/// Relative rotation measurement `Z ≈ R_iᵀ R_j`, `e = Log(Zᵀ R_iᵀ R_j)`.
#[derive(Debug, Clone)]
pub struct Rot3Between {
    keys: [Key; 2],
    measured: Rotation3<f64>,
    sqrt_info: DMatrix<f64>,
}

impl Rot3Between {
    pub fn new(i: Key, j: Key, measured: Rotation3<f64>, sqrt_info: DMatrix<f64>) -> Self {
        assert_eq!(sqrt_info.ncols(), 3);
        Self { keys: [i, j], measured, sqrt_info }
    }
}

impl Factor for Rot3Between {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn linearize(&self, vars: &[&Variable]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let ri = vars[0].as_rot3()?;
        let rj = vars[1].as_rot3()?;
        let rel = ri.inverse() * rj;
        let e = so3::log(&(self.measured.inverse() * rel));
        let jr = so3::right_jacobian_inv(&e);
        let ji = -jr * rel.inverse().matrix();
        Ok((
            DVector::from_column_slice(e.as_slice()),
            vec![
                DMatrix::from_column_slice(3, 3, ji.as_slice()),
                DMatrix::from_column_slice(3, 3, jr.as_slice()),
            ],
        ))
    }

    fn sqrt_info(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    fn kind(&self) -> &'static str {
        "rot3_between"
    }
}
