use std::collections::BTreeMap;
use std::sync::Arc;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linear::EnvelopeCholesky;
use super::{Factor, FactorGraph, Key, Values};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmParams {
    pub max_iterations: usize,
    /// Stop once the relative cost decrease of an accepted step falls below this.
    pub tolerance: f64,
    pub initial_lambda: f64,
    pub lambda_factor: f64,
    pub max_lambda: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            max_iterations: 25,
            tolerance: 1e-9,
            initial_lambda: 1e-4,
            lambda_factor: 10.0,
            max_lambda: 1e10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    /// No cost-reducing step was found even at maximum damping.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub status: Status,
}

/// Tangent-space layout of a set of variables.
#[derive(Debug, Clone, Default)]
pub struct Ordering {
    slots: BTreeMap<Key, (usize, usize)>,
    dim: usize,
}

impl Ordering {
    /// All variables in key order.
    pub fn from_values(values: &Values) -> Self {
        let keys: Vec<Key> = values.keys().copied().collect();
        Self::from_keys(&keys, values).expect("keys come from values")
    }

    /// Variables laid out in the given order.
    pub fn from_keys(keys: &[Key], values: &Values) -> Result<Self> {
        let mut slots = BTreeMap::new();
        let mut dim = 0;
        for k in keys {
            let d = values.get(k)?.tangent_dim();
            slots.insert(*k, (dim, d));
            dim += d;
        }
        Ok(Self { slots, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(offset, tangent_dim)` of a key.
    pub fn slot(&self, key: &Key) -> Option<(usize, usize)> {
        self.slots.get(key).copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.slots.keys()
    }
}

/// Gauss-Newton system `H = JᵀJ`, `g = Jᵀr` of whitened factors, plus the cost.
pub fn linearize_system(
    factors: &[Arc<dyn Factor>],
    values: &Values,
    ordering: &Ordering,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let n = ordering.dim();
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let mut cost = 0.0;
    for f in factors {
        let keys = f.keys();
        let vars = values.gather(keys)?;
        let (e, jacs) = f.linearize(&vars)?;
        let l = f.sqrt_info();
        let r = l * e;
        cost += 0.5 * r.norm_squared();
        let slots: Vec<(usize, usize)> = keys
            .iter()
            .map(|k| {
                ordering
                    .slot(k)
                    .ok_or_else(|| Error::UnknownVariable(k.to_string()))
            })
            .collect::<Result<_>>()?;
        let width: usize = slots.iter().map(|s| s.1).sum();
        let mut stacked = DMatrix::zeros(r.len(), width);
        let mut col = 0;
        for (j, (_, d)) in jacs.iter().zip(&slots) {
            debug_assert_eq!(j.ncols(), *d);
            stacked.columns_mut(col, *d).gemm(1.0, l, j, 0.0);
            col += d;
        }
        scatter(&mut h, &mut g, &stacked, &r, &slots);
    }
    Ok((h, g, cost))
}

/// Adds `JᵀJ` and `Jᵀr` of one whitened factor into the global system.
/// Written with explicit loops because this is the hot path of every update.
fn scatter(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    j: &DMatrix<f64>,
    r: &DVector<f64>,
    slots: &[(usize, usize)],
) {
    let m = j.nrows();
    let n = h.nrows();
    let js = j.as_slice();
    let rs = r.as_slice();
    let mut cols = Vec::with_capacity(j.ncols());
    for (o, d) in slots {
        cols.extend(*o..*o + *d);
    }
    let hs = h.as_mut_slice();
    let gs = g.as_mut_slice();
    for (a, &ga) in cols.iter().enumerate() {
        let ja = &js[a * m..(a + 1) * m];
        gs[ga] += ja.iter().zip(rs).map(|(x, y)| x * y).sum::<f64>();
        for (b, &gb) in cols.iter().enumerate() {
            let jb = &js[b * m..(b + 1) * m];
            hs[gb * n + ga] += ja.iter().zip(jb).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

fn retract_all(values: &Values, ordering: &Ordering, delta: &DVector<f64>) -> Result<Values> {
    let mut out = values.clone();
    for (k, v) in values.iter() {
        if let Some((o, d)) = ordering.slot(k) {
            out.insert(*k, v.retract(&delta.as_slice()[o..o + d])?);
        }
    }
    Ok(out)
}

/// Levenberg-Marquardt over every variable in `values`.
///
/// Each iteration first tries the undamped Gauss-Newton step and falls back
/// to Marquardt damping `λ diag(H)` when it does not reduce the cost, so a
/// linear problem is solved in a single iteration.
pub fn optimize(
    graph: &FactorGraph,
    values: &mut Values,
    params: &LmParams,
) -> Result<OptimizeReport> {
    let ordering = Ordering::from_values(values);
    let (mut h, mut g, mut cost) = linearize_system(graph.factors(), values, &ordering)?;
    let initial_cost = cost;
    let mut lambda = params.initial_lambda;
    let mut iterations = 0;
    let mut status = Status::MaxIterations;

    while iterations < params.max_iterations {
        if cost == 0.0 || g.amax() == 0.0 {
            status = Status::Converged;
            break;
        }
        iterations += 1;
        let mut damping = 0.0;
        let mut accepted = None;
        loop {
            let mut a = h.clone();
            if damping > 0.0 {
                for i in 0..a.nrows() {
                    a[(i, i)] += damping * h[(i, i)];
                }
            }
            match EnvelopeCholesky::new(&a) {
                Ok(chol) => {
                    let delta = -chol.solve(&g);
                    let trial = retract_all(values, &ordering, &delta);
                    let trial_cost = trial
                        .as_ref()
                        .ok()
                        .and_then(|t| graph.total_cost(t).ok())
                        .filter(|c| c.is_finite());
                    if let (Ok(t), Some(c)) = (trial, trial_cost) {
                        if c <= cost {
                            let predicted = -(g.dot(&delta) + 0.5 * delta.dot(&(&h * &delta)));
                            accepted = Some((t, c, predicted));
                            break;
                        }
                    }
                }
                Err(e) if damping > 0.0 => return Err(e),
                Err(_) => {}
            }
            if damping == 0.0 {
                damping = lambda;
            } else {
                lambda *= params.lambda_factor;
                damping = lambda;
            }
            if damping > params.max_lambda {
                break;
            }
        }

        let Some((trial, new_cost, predicted)) = accepted else {
            status = Status::Stalled;
            break;
        };
        if damping > 0.0 {
            lambda = (lambda / params.lambda_factor).max(1e-12);
        }
        let decrease = cost - new_cost;
        // An undamped step whose actual decrease equals the quadratic model's
        // prediction landed on the optimum of an exact model.
        let model_exact =
            damping == 0.0 && (decrease - predicted).abs() <= params.tolerance * cost;
        debug!(
            "lm iteration {iterations}: cost {cost:.6e} -> {new_cost:.6e}, damping {damping:.1e}"
        );
        *values = trial;
        let relative = decrease / cost;
        cost = new_cost;
        if relative < params.tolerance || model_exact {
            status = Status::Converged;
            break;
        }
        let (h2, g2, c2) = linearize_system(graph.factors(), values, &ordering)?;
        h = h2;
        g = g2;
        cost = c2;
    }

    Ok(OptimizeReport { initial_cost, final_cost: cost, iterations, status })
}

/// Tangent-space covariance of one variable: the matching block of `H⁻¹`.
pub fn marginal_covariance(graph: &FactorGraph, values: &Values, key: Key) -> Result<DMatrix<f64>> {
    let ordering = Ordering::from_values(values);
    let (offset, dim) = ordering
        .slot(&key)
        .ok_or_else(|| Error::UnknownVariable(key.to_string()))?;
    let (h, _, _) = linearize_system(graph.factors(), values, &ordering)?;
    let chol = EnvelopeCholesky::new(&h)?;
    Ok(chol.inverse_block(offset, dim))
}
