//! Range from the position of a pose to a fixed anchor.

use nalgebra::{DMatrix, DVector};

use super::{locate, MeasurementModel};
use crate::error::{contract, Result};
use crate::lie::{self, GroupElement};
use crate::state::ManifoldPoint;

/// Euclidean distance between the position block of `x` and `anchor`.
pub fn range_to_anchor(x: &GroupElement, anchor: &DVector<f64>) -> Result<f64> {
    let p = x
        .position()
        .ok_or_else(|| contract(format!("{} has no position block", x.kind().name())))?;
    if p.len() != anchor.len() {
        return Err(contract(format!(
            "anchor has length {}, position has {}",
            anchor.len(),
            p.len()
        )));
    }
    Ok((p - anchor).norm())
}

/// Scalar range measurement `|r - a| + v`, `v ~ N(0, variance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeToAnchor {
    pub anchor: DVector<f64>,
    pub variance: f64,
    /// Child of a composite state holding the pose, if any.
    pub target: Option<String>,
}

impl RangeToAnchor {
    pub fn new(anchor: [f64; 3], variance: f64) -> Self {
        Self {
            anchor: DVector::from_column_slice(&anchor),
            variance,
            target: None,
        }
    }

    pub fn with_anchor(anchor: DVector<f64>, variance: f64) -> Self {
        Self {
            anchor,
            variance,
            target: None,
        }
    }

    pub fn with_target(mut self, id: impl Into<String>) -> Self {
        self.target = Some(id.into());
        self
    }

    fn pose<'a>(&self, x: &'a ManifoldPoint) -> Result<(usize, &'a ManifoldPoint, &'a GroupElement)> {
        let (offset, child) = locate(x, self.target.as_deref())?;
        let g = child
            .as_group()
            .ok_or_else(|| contract("range model needs a pose state"))?;
        Ok((offset, child, g))
    }
}

impl MeasurementModel for RangeToAnchor {
    fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>> {
        let (_, _, g) = self.pose(x)?;
        Ok(DVector::from_element(1, range_to_anchor(g, &self.anchor)?))
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        let (offset, child, g) = self.pose(x)?;
        let mut out = DMatrix::zeros(1, x.dof());
        let p = g.position().ok_or_else(|| contract("pose has no position block"))?;
        if p.len() != self.anchor.len() {
            return Err(contract("anchor dimension does not match the pose"));
        }
        let diff = &p - &self.anchor;
        let dist = diff.norm();
        if dist == 0.0 {
            log::warn!("range jacobian undefined at the anchor; returning a zero row");
            return Ok(out);
        }
        let origin = DVector::zeros(g.kind().action_dim());
        let dp = lie::action_jacobian(g, &origin, child.side().unwrap())?;
        let row = (diff / dist).transpose() * dp;
        out.view_mut((0, offset), (1, child.dof())).copy_from(&row);
        Ok(out)
    }

    fn covariance(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_element(1, 1, self.variance))
    }
}
