//! Discrete linear process `x_k = F x_{k-1} + L u_{k-1}`.

use nalgebra::DMatrix;

use super::{ProcessModel, StampedInput};
use crate::error::{contract, Result};
use crate::state::{symmetrize, ManifoldPoint};

/// Linear time-invariant process on a vector state. The process noise is
/// `Q + L Q^u L^T`, where `Q` is the optional state-additive term and `Q^u`
/// comes from the stamped input.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProcess {
    pub f: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub q: Option<DMatrix<f64>>,
}

impl LinearProcess {
    pub fn new(f: DMatrix<f64>, l: DMatrix<f64>) -> Result<Self> {
        if !f.is_square() || l.nrows() != f.nrows() {
            return Err(contract(format!(
                "linear process needs square F and L with matching rows, got F {}x{}, L {}x{}",
                f.nrows(),
                f.ncols(),
                l.nrows(),
                l.ncols()
            )));
        }
        Ok(Self { f, l, q: None })
    }

    pub fn with_noise(mut self, q: DMatrix<f64>) -> Result<Self> {
        if q.shape() != self.f.shape() {
            return Err(contract("process noise must match F"));
        }
        self.q = Some(symmetrize(&q));
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.l.ncols()
    }

    fn check(&self, x: &ManifoldPoint, u: &StampedInput) -> Result<()> {
        let v = x
            .as_vector()
            .ok_or_else(|| contract("linear process needs a vector state"))?;
        if v.len() != self.state_dim() || u.dim() != self.input_dim() {
            return Err(contract(format!(
                "linear process expects state {} and input {}, got {} and {}",
                self.state_dim(),
                self.input_dim(),
                v.len(),
                u.dim()
            )));
        }
        Ok(())
    }
}

impl ProcessModel for LinearProcess {
    fn evaluate(&self, x: &ManifoldPoint, u: &StampedInput, _dt: f64) -> Result<ManifoldPoint> {
        self.check(x, u)?;
        let v = x.as_vector().unwrap();
        x.with_vector(&self.f * v + &self.l * &u.u)
    }

    fn jacobian(&self, x: &ManifoldPoint, u: &StampedInput, _dt: f64) -> Result<DMatrix<f64>> {
        self.check(x, u)?;
        Ok(self.f.clone())
    }

    fn input_jacobian(
        &self,
        x: &ManifoldPoint,
        u: &StampedInput,
        _dt: f64,
    ) -> Option<Result<DMatrix<f64>>> {
        Some(self.check(x, u).map(|_| self.l.clone()))
    }

    fn additive_covariance(
        &self,
        _x: &ManifoldPoint,
        _u: &StampedInput,
        _dt: f64,
    ) -> Option<DMatrix<f64>> {
        self.q.clone()
    }

    fn covariance(&self, x: &ManifoldPoint, u: &StampedInput, _dt: f64) -> Result<DMatrix<f64>> {
        self.check(x, u)?;
        let n = self.state_dim();
        let mut q = self.q.clone().unwrap_or_else(|| DMatrix::zeros(n, n));
        if let Some(qu) = &u.covariance {
            q += &self.l * qu * self.l.transpose();
        }
        Ok(symmetrize(&q))
    }
}
