use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::optimizer::{linearize_system, Ordering};
use super::{Factor, FactorGraph, Key, Values, Variable};
use crate::error::{Error, Result};

/// Dense linear prior `A δ + b` on tangent perturbations `δ = x ⊖ x₀` about
/// a frozen linearization point `x₀`.
#[derive(Debug, Clone)]
pub struct MarginalPrior {
    keys: Vec<Key>,
    linearization_point: Vec<Variable>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    sqrt_info: DMatrix<f64>,
}

impl MarginalPrior {
    pub fn new(
        keys: Vec<Key>,
        linearization_point: Vec<Variable>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Self {
        assert_eq!(keys.len(), linearization_point.len());
        assert_eq!(a.nrows(), b.len());
        let rows = a.nrows();
        Self {
            keys,
            linearization_point,
            a,
            b,
            sqrt_info: DMatrix::identity(rows, rows),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn linearization_point(&self) -> &[Variable] {
        &self.linearization_point
    }

    /// Information matrix `AᵀA` over the connected variables.
    pub fn information(&self) -> DMatrix<f64> {
        self.a.transpose() * &self.a
    }
}

impl Factor for MarginalPrior {
    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn linearize(&self, vars: &[&Variable]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let mut r = self.b.clone();
        let mut jacs = Vec::with_capacity(vars.len());
        let mut col = 0;
        for (x0, x) in self.linearization_point.iter().zip(vars) {
            let d = x0.tangent_dim();
            let block = self.a.columns(col, d);
            let delta = x0.local(x)?;
            r.gemv(1.0, &block, &delta, 1.0);
            jacs.push(block * x0.local_jacobian(x)?);
            col += d;
        }
        Ok((r, jacs))
    }

    fn sqrt_info(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    fn kind(&self) -> &'static str {
        "marginal_prior"
    }
}

/// Eliminates `keys` from the graph.
///
/// Every factor touching `keys` is linearized at the current values and
/// replaced by the Schur complement on the surviving neighbours. Returns the
/// new prior, or `None` when the removed variables had no neighbours.
pub fn marginalize(
    graph: &mut FactorGraph,
    values: &mut Values,
    keys: &[Key],
) -> Result<Option<Arc<MarginalPrior>>> {
    let removed = graph.remove_touching(keys);
    let remove_set: BTreeSet<Key> = keys.iter().copied().collect();
    let kept: Vec<Key> = removed
        .iter()
        .flat_map(|f| f.keys().iter().copied())
        .filter(|k| !remove_set.contains(k))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let result = if kept.is_empty() {
        None
    } else {
        let mut layout: Vec<Key> = keys.to_vec();
        layout.extend(&kept);
        let ordering = Ordering::from_keys(&layout, values)?;
        let (h, g, _) = linearize_system(&removed, values, &ordering)?;
        let m: usize = keys
            .iter()
            .map(|k| values.get(k).map(|v| v.tangent_dim()))
            .sum::<Result<usize>>()?;
        let o = ordering.dim() - m;

        let h_mm = h.view((0, 0), (m, m)).clone_owned();
        let h_om = h.view((m, 0), (o, m)).clone_owned();
        let chol = h_mm.cholesky().ok_or_else(|| {
            Error::RankDeficient(format!("information of {keys:?} is singular"))
        })?;
        let x = chol.solve(&h_om.transpose());
        let gm = chol.solve(&g.rows(0, m).clone_owned());
        let mut schur = h.view((m, m), (o, o)) - &h_om * &x;
        schur = 0.5 * (&schur + schur.transpose());
        let g_o = g.rows(m, o) - &h_om * gm;

        let eig = schur.symmetric_eigen();
        let lmax = eig.eigenvalues.amax();
        let keep: Vec<usize> = (0..o)
            .filter(|&i| eig.eigenvalues[i] > 1e-12 * lmax.max(f64::MIN_POSITIVE))
            .collect();
        let mut a = DMatrix::zeros(keep.len(), o);
        let mut b = DVector::zeros(keep.len());
        for (row, &i) in keep.iter().enumerate() {
            let lam = eig.eigenvalues[i];
            let v = eig.eigenvectors.column(i);
            a.row_mut(row).copy_from(&(v.transpose() * lam.sqrt()));
            b[row] = v.dot(&g_o) / lam.sqrt();
        }
        let lin = kept
            .iter()
            .map(|k| values.get(k).cloned())
            .collect::<Result<Vec<_>>>()?;
        let prior = Arc::new(MarginalPrior::new(kept, lin, a, b));
        graph.add_shared(prior.clone());
        Some(prior)
    };

    for k in keys {
        values.remove(k);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlls::check::jacobian_relative_error;
    use crate::nlls::{
        marginal_covariance, optimize, sqrt_info_from_sigmas, LmParams, S2Between, S2Prior,
        VectorBetween, VectorPrior,
    };
    use crate::s2::S2Point;

    fn x(i: u32) -> Key {
        Key::new('x', i)
    }

    fn scalar(v: f64) -> Variable {
        Variable::Vector(DVector::from_vec(vec![v]))
    }

    fn chain() -> (FactorGraph, Values) {
        let mut graph = FactorGraph::new();
        graph.add(VectorPrior::new(x(0), DVector::from_vec(vec![1.0]), sqrt_info_from_sigmas(&[0.5])));
        graph.add(VectorBetween::new(x(0), x(1), sqrt_info_from_sigmas(&[0.3])));
        graph.add(VectorBetween::new(x(1), x(2), sqrt_info_from_sigmas(&[0.2])));
        graph.add(VectorPrior::new(x(1), DVector::from_vec(vec![1.4]), sqrt_info_from_sigmas(&[1.0])));
        graph.add(VectorPrior::new(x(2), DVector::from_vec(vec![0.7]), sqrt_info_from_sigmas(&[0.8])));
        let mut values = Values::new();
        for i in 0..3 {
            values.insert(x(i), scalar(0.0));
        }
        (graph, values)
    }

    #[test]
    fn linear_chain_marginalization_is_lossless() {
        let (graph, mut batch) = chain();
        optimize(&graph, &mut batch, &LmParams::default()).unwrap();
        let batch_cov = marginal_covariance(&graph, &batch, x(2)).unwrap();

        let (mut graph2, mut values) = chain();
        // Marginalize at a point that is not the optimum.
        values.insert(x(0), scalar(0.3));
        values.insert(x(1), scalar(-0.2));
        marginalize(&mut graph2, &mut values, &[x(0)]).unwrap();
        optimize(&graph2, &mut values, &LmParams::default()).unwrap();
        for i in 1..3 {
            let a = batch.get(&x(i)).unwrap().as_vector().unwrap()[0];
            let b = values.get(&x(i)).unwrap().as_vector().unwrap()[0];
            assert!((a - b).abs() < 1e-9, "x{i}: {a} vs {b}");
        }
        let cov = marginal_covariance(&graph2, &values, x(2)).unwrap();
        assert!((cov - batch_cov).amax() < 1e-9);
    }

    #[test]
    fn diffusion_only_marginal_matches_propagation() {
        // x0 ~ N(2, 0.4²), x1 = x0 + w, w ~ N(0, 0.3²)  =>  x1 ~ N(2, 0.4² + 0.3²)
        let mut graph = FactorGraph::new();
        graph.add(VectorPrior::new(x(0), DVector::from_vec(vec![2.0]), sqrt_info_from_sigmas(&[0.4])));
        graph.add(VectorBetween::new(x(0), x(1), sqrt_info_from_sigmas(&[0.3])));
        let mut values = Values::new();
        values.insert(x(0), scalar(2.0));
        values.insert(x(1), scalar(0.0));
        let prior = marginalize(&mut graph, &mut values, &[x(0)]).unwrap().unwrap();
        assert_eq!(graph.len(), 1);
        assert!(!values.contains(&x(0)));
        let info = prior.information()[(0, 0)];
        assert!((1.0 / info - 0.25).abs() < 1e-12);
        optimize(&graph, &mut values, &LmParams::default()).unwrap();
        let x1 = values.get(&x(1)).unwrap().as_vector().unwrap()[0];
        assert!((x1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn marginal_prior_jacobians_on_sphere() {
        let g = |i| Key::new('g', i);
        let mut graph = FactorGraph::new();
        let p = S2Point::from_xyz(0.05, -0.02, 1.0).unwrap();
        graph.add(S2Prior::new(g(0), p, sqrt_info_from_sigmas(&[0.01, 0.01]), true));
        graph.add(S2Between::new(g(0), g(1), sqrt_info_from_sigmas(&[0.02, 0.02]), true));
        let mut values = Values::new();
        values.insert(g(0), Variable::S2(p));
        values.insert(g(1), Variable::S2(S2Point::from_xyz(0.04, 0.0, 1.0).unwrap()));
        let prior = marginalize(&mut graph, &mut values, &[g(0)]).unwrap().unwrap();
        let moved = Variable::S2(S2Point::from_xyz(0.1, 0.03, 1.0).unwrap());
        assert!(jacobian_relative_error(prior.as_ref(), &[&moved], 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn isolated_variable_leaves_no_prior() {
        let mut graph = FactorGraph::new();
        graph.add(VectorPrior::new(x(0), DVector::from_vec(vec![2.0]), sqrt_info_from_sigmas(&[0.4])));
        let mut values = Values::new();
        values.insert(x(0), scalar(2.0));
        assert!(marginalize(&mut graph, &mut values, &[x(0)]).unwrap().is_none());
        assert!(graph.is_empty() && values.is_empty());
    }
}
