use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Cholesky factorization `A = L Lᵀ` restricted to the row envelope of `A`.
///
/// Rows of `L` keep the leading zeros of the corresponding rows of `A`, so
/// banded systems such as chains of per-interval variables factor in
/// `O(n b²)` while storage stays dense.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    first: Vec<usize>,
    l: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factors the lower triangle of `a`; the upper triangle is ignored.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let first: Vec<usize> = (0..n)
            .map(|i| (0..i).find(|&j| a[(i, j)] != 0.0).unwrap_or(i))
            .collect();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let k0 = fi.max(first[j]);
                let row_i = &l[i * n + k0..i * n + j];
                let row_j = &l[j * n + k0..j * n + j];
                let dot: f64 = row_i.iter().zip(row_j).map(|(x, y)| x * y).sum();
                let s = a[(i, j)] - dot;
                if i == j {
                    let diag = a[(i, i)];
                    if !(s > 1e-13 * diag.abs()) || !s.is_finite() {
                        return Err(Error::RankDeficient(format!(
                            "pivot {i} is {s:e} (diagonal {diag:e})"
                        )));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, first, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.l[i * n + fi..i * n + i];
            let dot: f64 = row.iter().zip(&b[fi..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - dot) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            b[i] /= self.l[i * n + i];
            let xi = b[i];
            let fi = self.first[i];
            for (k, lik) in (fi..i).zip(&self.l[i * n + fi..i * n + i]) {
                b[k] -= lik * xi;
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// Rows and columns `offset..offset+dim` of `A⁻¹`.
    pub fn inverse_block(&self, offset: usize, dim: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(dim, dim);
        let mut col = vec![0.0; self.n];
        for c in 0..dim {
            col.iter_mut().for_each(|x| *x = 0.0);
            col[offset + c] = 1.0;
            self.solve_in_place(&mut col);
            for r in 0..dim {
                out[(r, c)] = col[offset + r];
            }
        }
        0.5 * (&out + out.transpose())
    }
}
