//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod linear;

use nalgebra::{DMatrix, DVector};
use navkit::evaluation::{trial_rng, ChaCha8Rng};
use navkit::models::MeasurementModel;
use navkit::{GroupElement, GroupKind, ManifoldPoint, Result, TangentVector};
use rand::Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    trial_rng(seed, 0)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-half_width..half_width))
}

pub fn random_tangent(rng: &mut ChaCha8Rng, kind: GroupKind, half_width: f64) -> TangentVector {
    TangentVector::new(kind, uniform_vec(rng, kind.dof(), half_width)).unwrap()
}

pub fn random_element(rng: &mut ChaCha8Rng, kind: GroupKind) -> GroupElement {
    random_tangent(rng, kind, 1.0).exp()
}

/// Symmetric positive definite matrix `A A^T + shift I`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * shift
}

/// `y = H x + v`, `v ~ N(0, R)`.
#[derive(Debug, Clone)]
pub struct LinearMeasurement {
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl MeasurementModel for LinearMeasurement {
    fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>> {
        Ok(&self.h * x.as_vector().unwrap())
    }

    fn output_dim(&self) -> usize {
        self.h.nrows()
    }

    fn jacobian(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        Ok(self.h.clone())
    }

    fn covariance(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        Ok(self.r.clone())
    }
}

/// Textbook Kalman filter, written out independently of the library.
pub fn kf_predict(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    bu: &DVector<f64>,
    q: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    (f * x + bu, f * p * f.transpose() + q)
}

pub fn kf_update(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = h * p * h.transpose() + r;
    let k = p * h.transpose() * s.try_inverse().unwrap();
    let n = x.len();
    (x + &k * (y - h * x), (DMatrix::identity(n, n) - &k * h) * p)
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.amax()
}
