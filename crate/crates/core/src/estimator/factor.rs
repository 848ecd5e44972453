use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::Result;
use crate::nlls::{sqrt_info_from_cov, Factor, Key, Variable};
use crate::odometry::{OdometryFactor, Vector9};

/// [`OdometryFactor`] attached to the `(s, b, g)` variables of one interval.
#[derive(Debug, Clone)]
pub struct OdometryNode {
    keys: [Key; 3],
    factor: OdometryFactor,
    sqrt_info: DMatrix<f64>,
}

impl OdometryNode {
    pub fn new(keys: [Key; 3], factor: OdometryFactor) -> Result<Self> {
        let cov = DMatrix::from_column_slice(3, 3, factor.sigma.as_slice());
        let sqrt_info = sqrt_info_from_cov(&cov)?;
        Ok(Self {
            keys,
            factor,
            sqrt_info,
        })
    }

    pub fn factor(&self) -> &OdometryFactor {
        &self.factor
    }
}

impl Factor for OdometryNode {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn linearize(&self, vars: &[&Variable]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let s = Vector9::from_column_slice(vars[0].as_vector()?.as_slice());
        let b = Vector3::from_column_slice(vars[1].as_vector()?.as_slice());
        let g = vars[2].as_s2()?;
        let e = self.factor.residual(&s, &b, g);
        let (js, jb, jg) = self.factor.jacobians(g)?;
        Ok((
            DVector::from_column_slice(e.as_slice()),
            vec![
                DMatrix::from_column_slice(3, 9, js.as_slice()),
                DMatrix::from_column_slice(3, 3, jb.as_slice()),
                DMatrix::from_column_slice(3, 2, jg.as_slice()),
            ],
        ))
    }

    fn sqrt_info(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    fn kind(&self) -> &'static str {
        "odometry"
    }
}
