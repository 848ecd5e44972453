//! Central-difference validation of analytic factor Jacobians.

use nalgebra::DMatrix;

use super::{Factor, Variable};
use crate::error::Result;

/// Jacobians of the unwhitened error by central differences in each
/// variable's tangent space.
pub fn numerical_jacobians(
    factor: &dyn Factor,
    vars: &[&Variable],
    step: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let dim = factor.error(vars)?.len();
    let mut out = Vec::with_capacity(vars.len());
    for (j, var) in vars.iter().enumerate() {
        let n = var.tangent_dim();
        let mut jac = DMatrix::zeros(dim, n);
        for c in 0..n {
            let mut delta = vec![0.0; n];
            delta[c] = step;
            let plus = var.retract(&delta)?;
            delta[c] = -step;
            let minus = var.retract(&delta)?;
            let mut moved: Vec<&Variable> = vars.to_vec();
            moved[j] = &plus;
            let ep = factor.error(&moved)?;
            moved[j] = &minus;
            let em = factor.error(&moved)?;
            jac.set_column(c, &((ep - em) / (2.0 * step)));
        }
        out.push(jac);
    }
    Ok(out)
}

/// `‖J − J_fd‖_F / max(‖J_fd‖_F, 1e-12)` over all blocks of a factor.
pub fn jacobian_relative_error(factor: &dyn Factor, vars: &[&Variable], step: f64) -> Result<f64> {
    let (_, analytic) = factor.linearize(vars)?;
    let numeric = numerical_jacobians(factor, vars, step)?;
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        diff += (a - n).norm_squared();
        norm += n.norm_squared();
    }
    Ok(diff.sqrt() / norm.sqrt().max(1e-12))
}
