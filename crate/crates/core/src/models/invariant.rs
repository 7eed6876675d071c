//! Point measurements with invariant structure, `y = X.b` or `y = X^-1.b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{locate, MeasurementModel};
use crate::error::{contract, Result};
use crate::lie::{self, GroupElement, Side};
use crate::state::{symmetrize, ManifoldPoint};

/// `Left` is `y = X.b` (left-invariant), `Right` is `y = X^-1.b`
/// (right-invariant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvariantForm {
    Left,
    Right,
}

impl InvariantForm {
    /// Perturbation side under which the transformed innovation Jacobian does
    /// not depend on the estimate.
    pub fn compatible_side(self) -> Side {
        match self {
            InvariantForm::Left => Side::Right,
            InvariantForm::Right => Side::Left,
        }
    }
}

/// Noise-free invariant point measurement.
pub fn invariant_point_measurement(
    x: &GroupElement,
    b: &DVector<f64>,
    form: InvariantForm,
) -> Result<DVector<f64>> {
    match form {
        InvariantForm::Left => x.act(b),
        InvariantForm::Right => x.inverse().act(b),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantPointMeasurement {
    pub b: DVector<f64>,
    pub form: InvariantForm,
    pub covariance: DMatrix<f64>,
    pub target: Option<String>,
}

impl InvariantPointMeasurement {
    pub fn new(b: DVector<f64>, form: InvariantForm, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.shape() != (b.len(), b.len()) {
            return Err(contract("measurement covariance must match the point dimension"));
        }
        Ok(Self {
            b,
            form,
            covariance: symmetrize(&covariance),
            target: None,
        })
    }

    pub fn with_target(mut self, id: impl Into<String>) -> Self {
        self.target = Some(id.into());
        self
    }

    fn element<'a>(&self, x: &'a ManifoldPoint) -> Result<(usize, &'a ManifoldPoint, &'a GroupElement)> {
        let (offset, child) = locate(x, self.target.as_deref())?;
        let g = child
            .as_group()
            .ok_or_else(|| contract("invariant measurement needs a group state"))?;
        Ok((offset, child, g))
    }
}

impl MeasurementModel for InvariantPointMeasurement {
    fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>> {
        let (_, _, g) = self.element(x)?;
        invariant_point_measurement(g, &self.b, self.form)
    }

    fn output_dim(&self) -> usize {
        self.b.len()
    }

    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        let (offset, child, g) = self.element(x)?;
        let side = child.side().unwrap();
        // d(X^-1 b): perturbing X on one side perturbs X^-1 on the other with
        // the opposite sign.
        let block = match self.form {
            InvariantForm::Left => lie::action_jacobian(g, &self.b, side)?,
            InvariantForm::Right => {
                let other = match side {
                    Side::Left => Side::Right,
                    Side::Right => Side::Left,
                };
                -lie::action_jacobian(&g.inverse(), &self.b, other)?
            }
        };
        let mut out = DMatrix::zeros(self.b.len(), x.dof());
        out.view_mut((0, offset), (self.b.len(), child.dof())).copy_from(&block);
        Ok(out)
    }

    fn covariance(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        Ok(self.covariance.clone())
    }

    fn invariant_form(&self) -> Option<InvariantForm> {
        Some(self.form)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{GroupKind, TangentVector};
    use crate::numdiff::{self, DiffScheme, Fallible};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_returns_b() {
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let i = GroupElement::identity(GroupKind::SE3);
        for form in [InvariantForm::Left, InvariantForm::Right] {
            assert_eq!(invariant_point_measurement(&i, &b, form).unwrap(), b);
        }
    }

    #[test]
    fn origin_maps_to_position() {
        let x = TangentVector::from_slice(GroupKind::SE3, &[0.4, -0.2, 0.9, 1.0, 2.0, -3.0])
            .unwrap()
            .exp();
        let y = invariant_point_measurement(&x, &DVector::zeros(3), InvariantForm::Left).unwrap();
        let r = x.position().unwrap();
        assert!((y - r).amax() < 1e-15);
    }

    #[test]
    fn right_form_of_inverse_is_left_form() {
        let y = TangentVector::from_slice(GroupKind::SE3, &[0.1, 0.2, 0.3, -1.0, 0.5, 2.0])
            .unwrap()
            .exp();
        let b = DVector::from_vec(vec![0.3, 0.7, -1.1]);
        let a = invariant_point_measurement(&y.inverse(), &b, InvariantForm::Right).unwrap();
        let c = invariant_point_measurement(&y, &b, InvariantForm::Left).unwrap();
        assert!((a - c).amax() < 1e-12);
    }

    #[test]
    fn analytic_jacobian_matches_numdiff() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for kind in GroupKind::ALL {
            for side in [Side::Left, Side::Right] {
                for form in [InvariantForm::Left, InvariantForm::Right] {
                    for _ in 0..100 {
                        let xi = DVector::from_fn(kind.dof(), |_, _| rng.random_range(-1.5..1.5));
                        let x =
                            ManifoldPoint::group(TangentVector::new(kind, xi).unwrap().exp(), side);
                        let b = DVector::from_fn(kind.action_dim(), |_, _| rng.random_range(-3.0..3.0));
                        let n = b.len();
                        let model =
                            InvariantPointMeasurement::new(b, form, DMatrix::identity(n, n)).unwrap();
                        let g = model.jacobian(&x).unwrap();
                        let g_num = numdiff::jacobian(
                            &Fallible(|p: &ManifoldPoint| {
                                model.evaluate(p).map(ManifoldPoint::vector)
                            }),
                            &x,
                            DiffScheme::central(),
                        )
                        .unwrap();
                        assert!((&g - &g_num).amax() < 1e-6, "{kind:?} {side:?} {form:?}");
                    }
                }
            }
        }
    }
}
