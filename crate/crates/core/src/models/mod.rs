//! Process and measurement model interfaces plus the built-in model library.
//!
//! Process models follow `X_k = f(X_{k-1}, u_{k-1}) ⊕ w_{k-1}` with
//! `w ~ N(0, Q)`; measurement models follow `y_k = g(X_k) + v_k` with
//! `v ~ N(0, R)`. Jacobians default to central finite differences.

mod body_velocity;
mod imu;
mod invariant;
mod linear;
mod range;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Result};
use crate::numdiff::{self, DiffScheme, Fallible};
use crate::state::ManifoldPoint;

pub use body_velocity::BodyFrameVelocity;
pub use imu::{imu_increment_matrices, ImuKinematics};
pub use invariant::{invariant_point_measurement, InvariantForm, InvariantPointMeasurement};
pub use linear::LinearProcess;
pub use range::{range_to_anchor, RangeToAnchor};

/// Input vector with its stamp and optional noise covariance `Q^u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StampedInput {
    pub u: DVector<f64>,
    pub stamp: f64,
    pub covariance: Option<DMatrix<f64>>,
}

impl StampedInput {
    pub fn new(u: DVector<f64>, stamp: f64) -> Self {
        Self {
            u,
            stamp,
            covariance: None,
        }
    }

    pub fn from_slice(u: &[f64], stamp: f64) -> Self {
        Self::new(DVector::from_column_slice(u), stamp)
    }

    pub fn with_covariance(mut self, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.shape() != (self.u.len(), self.u.len()) {
            return Err(contract(format!(
                "input covariance must be {0}x{0}",
                self.u.len()
            )));
        }
        self.covariance = Some(crate::state::symmetrize(&covariance));
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Copy with a different input value, keeping stamp and covariance.
    pub fn with_value(&self, u: DVector<f64>) -> Self {
        Self {
            u,
            stamp: self.stamp,
            covariance: self.covariance.clone(),
        }
    }
}

pub trait ProcessModel: Send + Sync {
    fn evaluate(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<ManifoldPoint>;

    /// `D f / D X` at `x`.
    fn jacobian(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<DMatrix<f64>> {
        let f = Fallible(|p: &ManifoldPoint| self.evaluate(p, u, dt));
        numdiff::jacobian(&f, x, DiffScheme::central())
    }

    /// Analytic input Jacobian `L = D f / D u`, when the model provides one.
    fn input_jacobian(
        &self,
        _x: &ManifoldPoint,
        _u: &StampedInput,
        _dt: f64,
    ) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// State-additive part of the process noise that does not come from the
    /// input covariance. Sigma-point filters sampling the input noise jointly
    /// with the state add this term after propagation.
    fn additive_covariance(
        &self,
        _x: &ManifoldPoint,
        _u: &StampedInput,
        _dt: f64,
    ) -> Option<DMatrix<f64>> {
        None
    }

    /// Process noise `Q`. The default maps the input covariance through the
    /// input Jacobian: `Q = L Q^u L^T`.
    fn covariance(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<DMatrix<f64>> {
        let qu = u.covariance.as_ref().ok_or_else(|| {
            contract("process covariance needs an input covariance on the stamped input")
        })?;
        let l = match self.input_jacobian(x, u, dt) {
            Some(l) => l?,
            None => numeric_input_jacobian(self, x, u, dt)?,
        };
        Ok(crate::state::symmetrize(&(&l * qu * l.transpose())))
    }
}

/// `D f / D u` by central differences.
pub fn numeric_input_jacobian<M: ProcessModel + ?Sized>(
    model: &M,
    x: &ManifoldPoint,
    u: &StampedInput,
    dt: f64,
) -> Result<DMatrix<f64>> {
    let f = Fallible(|p: &ManifoldPoint| {
        let v = p.as_vector().expect("input perturbation is a vector").clone();
        model.evaluate(x, &u.with_value(v), dt)
    });
    numdiff::jacobian(&f, &ManifoldPoint::vector(u.u.clone()), DiffScheme::central())
}

pub trait MeasurementModel: Send + Sync + fmt::Debug {
    fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>>;

    fn output_dim(&self) -> usize;

    /// `D g / D X` at `x`.
    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        let f = Fallible(|p: &ManifoldPoint| self.evaluate(p).map(ManifoldPoint::vector));
        numdiff::jacobian(&f, x, DiffScheme::central())
    }

    fn covariance(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>>;

    /// Declared invariant structure, used by the invariant EKF.
    fn invariant_form(&self) -> Option<InvariantForm> {
        None
    }
}

/// A measurement bound to the model that explains it.
#[derive(Debug, Clone)]
pub struct StampedMeasurement {
    pub y: DVector<f64>,
    pub stamp: f64,
    pub model: Arc<dyn MeasurementModel>,
    pub target_state_id: Option<String>,
}

impl StampedMeasurement {
    pub fn new(y: DVector<f64>, stamp: f64, model: Arc<dyn MeasurementModel>) -> Result<Self> {
        if y.len() != model.output_dim() {
            return Err(contract(format!(
                "measurement has length {}, model outputs {}",
                y.len(),
                model.output_dim()
            )));
        }
        Ok(Self {
            y,
            stamp,
            model,
            target_state_id: None,
        })
    }

    pub fn with_target(mut self, id: impl Into<String>) -> Self {
        self.target_state_id = Some(id.into());
        self
    }
}

/// Offset and child of a composite addressed by `state_id`, or the whole
/// point when `target` is `None`.
pub(crate) fn locate<'a>(
    x: &'a ManifoldPoint,
    target: Option<&str>,
) -> Result<(usize, &'a ManifoldPoint)> {
    let Some(id) = target else {
        return Ok((0, x));
    };
    let children = x
        .children()
        .ok_or_else(|| contract(format!("target '{id}' needs a composite state")))?;
    let mut offset = 0;
    for c in children {
        if c.state_id.as_deref() == Some(id) {
            return Ok((offset, c));
        }
        offset += c.dof();
    }
    Err(contract(format!("composite has no child with state_id '{id}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measurement_length_is_checked() {
        let model = Arc::new(RangeToAnchor::new([0.0, 0.0, 0.0], 0.01));
        assert!(StampedMeasurement::new(DVector::from_vec(vec![1.0, 2.0]), 0.0, model.clone()).is_err());
        assert!(StampedMeasurement::new(DVector::from_vec(vec![1.0]), 0.0, model).is_ok());
    }

    #[test]
    fn input_covariance_shape_is_checked() {
        let u = StampedInput::from_slice(&[1.0, 2.0], 0.0);
        assert!(u.clone().with_covariance(DMatrix::identity(3, 3)).is_err());
        assert!(u.with_covariance(DMatrix::identity(2, 2)).is_ok());
    }
}
