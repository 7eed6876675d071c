//! Invariant EKF correction.
//!
//! For `y = X^-1.b` (right-invariant) with left perturbations, or `y = X.b`
//! (left-invariant) with right perturbations, mapping the innovation through
//! the estimate's linear action gives a Jacobian that does not depend on the
//! estimate.

use nalgebra::{DMatrix, DVector};

use super::ekf::{correct_parts, linear_update};
use super::{check_measurement_stamp, CovarianceUpdate};
use crate::error::{Error, Result};
use crate::lie::Side;
use crate::models::{InvariantForm, StampedMeasurement};
use crate::state::{symmetrize, GaussianBelief};

/// Transformed innovation `z`, its Jacobian and its noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantInnovation {
    pub z: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

/// Right-invariant: `z = C (y - g)`, `Z = C G`, `R_z = C R C^T`.
/// Left-invariant: the same with `C^T`, where `C` is the linear action
/// (rotation block) of the estimate.
pub fn invariant_innovation(
    belief: &GaussianBelief,
    meas: &StampedMeasurement,
) -> Result<InvariantInnovation> {
    let form = meas.model.invariant_form().ok_or_else(|| {
        Error::Configuration("measurement model declares no invariant form".into())
    })?;
    let (_, child) = crate::models::locate(&belief.mean, meas.target_state_id.as_deref())?;
    let element = child
        .as_group()
        .ok_or_else(|| Error::Configuration("invariant correction needs a group state".into()))?;
    let side = child.side().unwrap();
    let needed = form.compatible_side();
    if side != needed {
        return Err(Error::Configuration(format!(
            "{} measurement needs {} perturbations, state uses {}: right-invariant \
             measurements pair with left perturbations and left-invariant with right",
            form_name(form),
            side_name(needed),
            side_name(side)
        )));
    }
    let c = element.action_matrix();
    let a = match form {
        InvariantForm::Right => c,
        InvariantForm::Left => c.transpose(),
    };
    let x = &belief.mean;
    let g = meas.model.jacobian(x)?;
    let r = meas.model.covariance(x)?;
    let resid = &meas.y - meas.model.evaluate(x)?;
    Ok(InvariantInnovation {
        z: &a * resid,
        jacobian: &a * g,
        noise: symmetrize(&(&a * r * a.transpose())),
    })
}

/// Invariant correction with `K = P Z^T (Z P Z^T + R_z)^-1`. Measurements
/// without an invariant form fall back to the standard EKF correction.
pub fn invariant_ekf_correct(
    belief: &GaussianBelief,
    meas: &StampedMeasurement,
) -> Result<GaussianBelief> {
    if meas.model.invariant_form().is_none() {
        return correct_parts(belief, meas, CovarianceUpdate::Standard).map(|c| c.belief);
    }
    check_measurement_stamp(belief, meas)?;
    let inn = invariant_innovation(belief, meas)?;
    linear_update(belief, &inn.jacobian, &inn.noise, inn.z, CovarianceUpdate::Standard)
        .map(|c| c.belief)
}

fn form_name(f: InvariantForm) -> &'static str {
    match f {
        InvariantForm::Left => "left-invariant",
        InvariantForm::Right => "right-invariant",
    }
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Left => "left",
        Side::Right => "right",
    }
}
