//! Stateless recursive estimators.
//!
//! Every operation is a pure function of `(belief, model, data)`. The
//! perturbation side is carried by the belief's mean, so the same code runs
//! on vector spaces and on either group convention.

mod ekf;
mod imm;
mod invariant;
mod iterated;
mod mixture;
mod sigma;

use nalgebra::DMatrix;

use crate::error::{contract, Error, Result};
use crate::models::{ProcessModel, StampedInput, StampedMeasurement};
use crate::state::GaussianBelief;

pub use ekf::{ekf_correct, ekf_correct_with, ekf_predict, CovarianceUpdate};
pub use imm::{imm_estimate, imm_step, ImmBelief, ImmStep};
pub use invariant::{invariant_ekf_correct, invariant_innovation, InvariantInnovation};
pub use iterated::{iterated_ekf_correct, IteratedCorrection};
pub use mixture::{mixture_collapse, GaussianMixture};
pub use sigma::{generate_sigma_points, spkf_correct, spkf_predict, SigmaPoint, SigmaPointScheme};

/// Largest condition number accepted for an innovation covariance.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Tolerance between measurement and belief stamps, in seconds.
pub const STAMP_TOLERANCE: f64 = 1e-9;

/// Common predict/correct interface so estimators can be swapped per step.
pub trait Filter: Send + Sync {
    fn name(&self) -> &'static str;

    fn predict(
        &self,
        belief: &GaussianBelief,
        model: &dyn ProcessModel,
        u: &StampedInput,
        dt: f64,
    ) -> Result<GaussianBelief>;

    fn correct(&self, belief: &GaussianBelief, meas: &StampedMeasurement) -> Result<GaussianBelief>;
}

/// Extended Kalman filter.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ekf {
    pub update: CovarianceUpdate,
}

impl Filter for Ekf {
    fn name(&self) -> &'static str {
        "ekf"
    }

    fn predict(
        &self,
        belief: &GaussianBelief,
        model: &dyn ProcessModel,
        u: &StampedInput,
        dt: f64,
    ) -> Result<GaussianBelief> {
        ekf_predict(belief, model, u, dt)
    }

    fn correct(&self, belief: &GaussianBelief, meas: &StampedMeasurement) -> Result<GaussianBelief> {
        ekf_correct_with(belief, meas, self.update)
    }
}

/// Iterated EKF; prediction is the EKF's.
#[derive(Debug, Clone, Copy)]
pub struct IteratedEkf {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for IteratedEkf {
    fn default() -> Self {
        Self {
            max_iters: 10,
            tol: 1e-9,
        }
    }
}

impl Filter for IteratedEkf {
    fn name(&self) -> &'static str {
        "iterekf"
    }

    fn predict(
        &self,
        belief: &GaussianBelief,
        model: &dyn ProcessModel,
        u: &StampedInput,
        dt: f64,
    ) -> Result<GaussianBelief> {
        ekf_predict(belief, model, u, dt)
    }

    fn correct(&self, belief: &GaussianBelief, meas: &StampedMeasurement) -> Result<GaussianBelief> {
        iterated_ekf_correct(belief, meas, self.max_iters, self.tol).map(|r| r.belief)
    }
}

/// Invariant EKF. Measurements declaring an invariant form are corrected in
/// the transformed innovation space; the rest use the standard correction.
#[derive(Debug, Clone, Copy, Default)]
pub struct InvariantEkf;

impl Filter for InvariantEkf {
    fn name(&self) -> &'static str {
        "invariant"
    }

    fn predict(
        &self,
        belief: &GaussianBelief,
        model: &dyn ProcessModel,
        u: &StampedInput,
        dt: f64,
    ) -> Result<GaussianBelief> {
        ekf_predict(belief, model, u, dt)
    }

    fn correct(&self, belief: &GaussianBelief, meas: &StampedMeasurement) -> Result<GaussianBelief> {
        invariant_ekf_correct(belief, meas)
    }
}

/// Sigma-point Kalman filter (UKF, CKF or GHKF depending on the scheme).
#[derive(Debug, Clone, Copy)]
pub struct SigmaPointFilter {
    pub scheme: SigmaPointScheme,
}

impl Filter for SigmaPointFilter {
    fn name(&self) -> &'static str {
        match self.scheme {
            SigmaPointScheme::Unscented { .. } => "ukf",
            SigmaPointScheme::SphericalCubature => "ckf",
            SigmaPointScheme::GaussHermite { .. } => "ghkf",
        }
    }

    fn predict(
        &self,
        belief: &GaussianBelief,
        model: &dyn ProcessModel,
        u: &StampedInput,
        dt: f64,
    ) -> Result<GaussianBelief> {
        spkf_predict(belief, model, u, dt, self.scheme)
    }

    fn correct(&self, belief: &GaussianBelief, meas: &StampedMeasurement) -> Result<GaussianBelief> {
        spkf_correct(belief, meas, self.scheme)
    }
}

pub(crate) fn require_stamp(belief: &GaussianBelief) -> Result<f64> {
    belief
        .stamp()
        .ok_or_else(|| contract("filters need a stamped belief mean"))
}

pub(crate) fn check_measurement_stamp(
    belief: &GaussianBelief,
    meas: &StampedMeasurement,
) -> Result<()> {
    let t = require_stamp(belief)?;
    if (meas.stamp - t).abs() > STAMP_TOLERANCE {
        return Err(contract(format!(
            "measurement stamp {} does not match belief stamp {t}",
            meas.stamp
        )));
    }
    Ok(())
}

/// Inverse of an innovation covariance, rejecting ill-conditioned matrices.
pub(crate) fn innovation_inverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = s.clone().singular_values();
    let (max, min) = (sv.max(), sv.min());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::SingularInnovation { condition });
    }
    let sym = crate::state::symmetrize(s);
    match sym.clone().cholesky() {
        Some(c) => Ok(c.inverse()),
        None => sym
            .try_inverse()
            .ok_or(Error::SingularInnovation { condition }),
    }
}

/// Lower Cholesky factor of a PSD matrix. An exactly zero matrix has a zero
/// factor; otherwise one retry with `1e-12 I` jitter is allowed.
pub(crate) fn psd_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if p.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let sym = crate::state::symmetrize(p);
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c.l());
    }
    (sym + DMatrix::identity(n, n) * 1e-12)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite("covariance factorization failed after jitter".into()))
}
