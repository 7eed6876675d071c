//! Body-frame velocity kinematics `X_k = X_{k-1} Exp(dt u)`.

use nalgebra::DMatrix;

use super::{ProcessModel, StampedInput};
use crate::error::{contract, Result};
use crate::lie::{self, GroupElement, Side, TangentVector};
use crate::state::ManifoldPoint;

/// Process model for a group state driven by a body-frame velocity input of
/// the same dimension as the group's tangent space.
#[derive(Debug, Clone, Copy, Default)]
pub struct BodyFrameVelocity;

impl BodyFrameVelocity {
    pub fn new() -> Self {
        Self
    }

    fn parts<'a>(
        x: &'a ManifoldPoint,
        u: &StampedInput,
        dt: f64,
    ) -> Result<(&'a GroupElement, Side, TangentVector)> {
        if !(dt > 0.0) {
            return Err(contract(format!("body velocity model needs dt > 0, got {dt}")));
        }
        let element = x
            .as_group()
            .ok_or_else(|| contract("body velocity model needs a group state"))?;
        let side = x.side().expect("group points carry a side");
        let xi = TangentVector::new(element.kind(), &u.u * dt)?;
        Ok((element, side, xi))
    }
}

impl ProcessModel for BodyFrameVelocity {
    fn evaluate(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<ManifoldPoint> {
        let (element, _, xi) = Self::parts(x, u, dt)?;
        x.with_element(element.compose(&xi.exp())?)
    }

    fn jacobian(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<DMatrix<f64>> {
        let (element, side, xi) = Self::parts(x, u, dt)?;
        let dof = element.kind().dof();
        Ok(match side {
            Side::Right => {
                let neg = TangentVector::new(xi.kind, -xi.coords.clone())?;
                neg.exp().adjoint()
            }
            Side::Left => DMatrix::identity(dof, dof),
        })
    }

    fn input_jacobian(
        &self,
        x: &ManifoldPoint,
        u: &StampedInput,
        dt: f64,
    ) -> Option<Result<DMatrix<f64>>> {
        Some(Self::parts(x, u, dt).map(|(element, side, xi)| match side {
            Side::Right => lie::group_jacobian(&xi, Side::Right) * dt,
            Side::Left => element.adjoint() * lie::group_jacobian(&xi, Side::Left) * dt,
        }))
    }
}
