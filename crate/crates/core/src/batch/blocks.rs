//! Block-structured normal equations.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::BatchProblem;
use crate::error::{Error, Result};
use crate::state::ManifoldPoint;

/// `H = J^T J` and `g = J^T r` stored per variable block.
pub(crate) struct NormalEquations {
    pub dims: Vec<usize>,
    pub diag: Vec<DMatrix<f64>>,
    /// Upper off-diagonal blocks `H[i, j]`, `i < j`.
    pub off: BTreeMap<(usize, usize), DMatrix<f64>>,
    pub grad: Vec<DVector<f64>>,
}

impl NormalEquations {
    pub fn build(problem: &BatchProblem, vars: &[ManifoldPoint]) -> Result<Self> {
        let dims: Vec<usize> = vars.iter().map(|v| v.dof()).collect();
        let mut diag: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
        let mut grad: Vec<DVector<f64>> = dims.iter().map(|&d| DVector::zeros(d)).collect();
        let mut off = BTreeMap::new();
        for (t, idx) in problem.terms.iter().zip(&problem.term_indices) {
            let refs: Vec<&ManifoldPoint> = idx.iter().map(|&i| &vars[i]).collect();
            let (r, blocks) = t.linearize(&refs)?;
            for (a, &ia) in idx.iter().enumerate() {
                grad[ia] += blocks[a].transpose() * &r;
                for (b, &ib) in idx.iter().enumerate() {
                    let h = blocks[a].transpose() * &blocks[b];
                    if ia == ib {
                        diag[ia] += h;
                    } else if ia < ib {
                        *off
                            .entry((ia, ib))
                            .or_insert_with(|| DMatrix::zeros(dims[ia], dims[ib])) += h;
                    }
                }
            }
        }
        Ok(Self {
            dims,
            diag,
            off,
            grad,
        })
    }

    pub fn grad_inf_norm(&self) -> f64 {
        self.grad.iter().map(|g| g.amax()).fold(0.0, f64::max)
    }

    pub fn mean_diagonal(&self) -> f64 {
        let (sum, n) = self
            .diag
            .iter()
            .fold((0.0, 0usize), |(s, n), d| (s + d.diagonal().sum(), n + d.nrows()));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn is_tridiagonal(&self) -> bool {
        self.off.keys().all(|&(i, j)| j == i + 1)
    }

    fn offsets(&self) -> Vec<usize> {
        let mut o = 0;
        self.dims
            .iter()
            .map(|d| {
                let s = o;
                o += d;
                s
            })
            .collect()
    }

    fn damped_diag(&self, lambda: f64) -> Vec<DMatrix<f64>> {
        self.diag
            .iter()
            .map(|d| {
                let mut out = d.clone();
                for k in 0..d.nrows() {
                    out[(k, k)] += lambda * d[(k, k)];
                }
                out
            })
            .collect()
    }

    pub fn dense(&self, lambda: f64) -> (DMatrix<f64>, DVector<f64>) {
        let offs = self.offsets();
        let n: usize = self.dims.iter().sum();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for (i, d) in self.damped_diag(lambda).iter().enumerate() {
            h.view_mut((offs[i], offs[i]), (self.dims[i], self.dims[i])).copy_from(d);
            g.rows_mut(offs[i], self.dims[i]).copy_from(&self.grad[i]);
        }
        for (&(i, j), b) in &self.off {
            h.view_mut((offs[i], offs[j]), b.shape()).copy_from(b);
            h.view_mut((offs[j], offs[i]), (b.ncols(), b.nrows())).copy_from(&b.transpose());
        }
        (h, g)
    }

    /// Solves `(H + lambda diag(H)) x = -g`, returning per-variable steps.
    pub fn solve(&self, lambda: f64, dense: bool) -> Result<Vec<DVector<f64>>> {
        if dense || !self.is_tridiagonal() {
            let (h, g) = self.dense(lambda);
            let chol = h.cholesky().ok_or_else(singular)?;
            let x = chol.solve(&(-g));
            let offs = self.offsets();
            return Ok(self
                .dims
                .iter()
                .zip(offs)
                .map(|(&d, o)| x.rows(o, d).into_owned())
                .collect());
        }
        let tri = Tridiagonal::factor(self, lambda)?;
        Ok(tri.solve(&self.grad.iter().map(|g| -g).collect::<Vec<_>>()))
    }

    /// Diagonal blocks of `H^-1`.
    pub fn marginals(&self, dense: bool) -> Result<(Vec<DMatrix<f64>>, Option<DMatrix<f64>>)> {
        if dense || !self.is_tridiagonal() {
            let (h, _) = self.dense(0.0);
            let cov = h.cholesky().ok_or_else(singular)?.inverse();
            let offs = self.offsets();
            let blocks = self
                .dims
                .iter()
                .zip(offs)
                .map(|(&d, o)| cov.view((o, o), (d, d)).into_owned())
                .collect();
            return Ok((blocks, Some(cov)));
        }
        Ok((Tridiagonal::factor(self, 0.0)?.marginals(), None))
    }
}

fn singular() -> Error {
    Error::Numerical(
        "normal equations are singular; the problem may be underdetermined \
         (Levenberg-Marquardt damping can help)"
            .into(),
    )
}

/// Forward elimination `S_i = D_i - B_{i-1}^T S_{i-1}^-1 B_{i-1}` with
/// `B_i = H[i, i+1]`.
struct Tridiagonal {
    s_inv: Vec<DMatrix<f64>>,
    upper: Vec<DMatrix<f64>>,
}

impl Tridiagonal {
    fn factor(ne: &NormalEquations, lambda: f64) -> Result<Self> {
        let d = ne.damped_diag(lambda);
        let n = d.len();
        let upper: Vec<DMatrix<f64>> = (0..n.saturating_sub(1))
            .map(|i| {
                ne.off
                    .get(&(i, i + 1))
                    .cloned()
                    .unwrap_or_else(|| DMatrix::zeros(ne.dims[i], ne.dims[i + 1]))
            })
            .collect();
        let mut s_inv = Vec::with_capacity(n);
        for i in 0..n {
            let mut s = d[i].clone();
            if i > 0 {
                let b = &upper[i - 1];
                s -= b.transpose() * &s_inv[i - 1] * b;
            }
            let inv = crate::state::symmetrize(&s)
                .cholesky()
                .ok_or_else(singular)?
                .inverse();
            s_inv.push(inv);
        }
        Ok(Self { s_inv, upper })
    }

    fn solve(&self, rhs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = rhs.len();
        let mut g: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut gi = rhs[i].clone();
            if i > 0 {
                gi -= self.upper[i - 1].transpose() * (&self.s_inv[i - 1] * &g[i - 1]);
            }
            g.push(gi);
        }
        let mut x = vec![DVector::zeros(0); n];
        for i in (0..n).rev() {
            let mut gi = g[i].clone();
            if i + 1 < n {
                gi -= &self.upper[i] * &x[i + 1];
            }
            x[i] = &self.s_inv[i] * gi;
        }
        x
    }

    fn marginals(&self) -> Vec<DMatrix<f64>> {
        let n = self.s_inv.len();
        let mut out = vec![DMatrix::zeros(0, 0); n];
        for i in (0..n).rev() {
            let mut sigma = self.s_inv[i].clone();
            if i + 1 < n {
                let a = &self.s_inv[i] * &self.upper[i];
                sigma += &a * &out[i + 1] * a.transpose();
            }
            out[i] = crate::state::symmetrize(&sigma);
        }
        out
    }
}
