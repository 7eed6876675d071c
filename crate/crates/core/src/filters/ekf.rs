//! Extended Kalman filter in covariance form.

use nalgebra::{DMatrix, DVector};

use super::{check_measurement_stamp, innovation_inverse, require_stamp};
use crate::error::{contract, Result};
use crate::models::{ProcessModel, StampedInput, StampedMeasurement};
use crate::state::{symmetrize, GaussianBelief};

/// Posterior covariance form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CovarianceUpdate {
    /// `(I - K G) P`, symmetrized.
    #[default]
    Standard,
    /// `(I - K G) P (I - K G)^T + K R K^T`.
    Joseph,
}

/// `X = f(X, u)`, `P = F P F^T + Q`. The output stamp is advanced by `dt`.
pub fn ekf_predict(
    belief: &GaussianBelief,
    model: &(impl ProcessModel + ?Sized),
    u: &StampedInput,
    dt: f64,
) -> Result<GaussianBelief> {
    let t = require_stamp(belief)?;
    if dt < 0.0 {
        return Err(contract(format!("prediction needs dt >= 0, got {dt}")));
    }
    let mean = model.evaluate(&belief.mean, u, dt)?;
    let f = model.jacobian(&belief.mean, u, dt)?;
    let q = model.covariance(&belief.mean, u, dt)?;
    let p = &f * &belief.covariance * f.transpose() + q;
    GaussianBelief::new(mean.restamped(Some(t + dt)), p)
}

pub fn ekf_correct(belief: &GaussianBelief, meas: &StampedMeasurement) -> Result<GaussianBelief> {
    ekf_correct_with(belief, meas, CovarianceUpdate::Standard)
}

pub fn ekf_correct_with(
    belief: &GaussianBelief,
    meas: &StampedMeasurement,
    update: CovarianceUpdate,
) -> Result<GaussianBelief> {
    correct_parts(belief, meas, update).map(|c| c.belief)
}

/// Correction with its innovation and innovation covariance, shared with the IMM.
pub(crate) struct Correction {
    pub belief: GaussianBelief,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub innovation_inv: DMatrix<f64>,
}

pub(crate) fn correct_parts(
    belief: &GaussianBelief,
    meas: &StampedMeasurement,
    update: CovarianceUpdate,
) -> Result<Correction> {
    check_measurement_stamp(belief, meas)?;
    let x = &belief.mean;
    let g = meas.model.jacobian(x)?;
    let r = meas.model.covariance(x)?;
    let z = &meas.y - meas.model.evaluate(x)?;
    linear_update(belief, &g, &r, z, update)
}

/// Kalman update of `belief` with innovation `z`, Jacobian `g` and noise `r`.
pub(crate) fn linear_update(
    belief: &GaussianBelief,
    g: &DMatrix<f64>,
    r: &DMatrix<f64>,
    z: DVector<f64>,
    update: CovarianceUpdate,
) -> Result<Correction> {
    let p = &belief.covariance;
    let pg = p * g.transpose();
    let s = symmetrize(&(g * &pg + r));
    let s_inv = innovation_inverse(&s)?;
    let k = &pg * &s_inv;
    let n = belief.dof();
    let ikg = DMatrix::identity(n, n) - &k * g;
    let cov = match update {
        CovarianceUpdate::Standard => &ikg * p,
        CovarianceUpdate::Joseph => &ikg * p * ikg.transpose() + &k * r * k.transpose(),
    };
    let mean = belief.mean.oplus(&(&k * &z))?;
    Ok(Correction {
        belief: GaussianBelief::new(mean, cov)?,
        innovation: z,
        innovation_cov: s,
        innovation_inv: s_inv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{GroupElement, GroupKind, Side};
    use crate::models::{BodyFrameVelocity, LinearProcess, MeasurementModel};
    use crate::state::ManifoldPoint;
    use std::sync::Arc;

    #[derive(Debug)]
    struct Direct(f64);

    impl MeasurementModel for Direct {
        fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>> {
            Ok(x.as_vector().unwrap().clone())
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn jacobian(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(1, 1))
        }
        fn covariance(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(1, 1, self.0))
        }
    }

    fn scalar(x: f64, p: f64) -> GaussianBelief {
        GaussianBelief::new(ManifoldPoint::from_slice(&[x]).with_stamp(0.0), DMatrix::from_element(1, 1, p))
            .unwrap()
    }

    #[test]
    fn random_walk_prediction() {
        let model = LinearProcess::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
            .unwrap()
            .with_noise(DMatrix::identity(1, 1))
            .unwrap();
        let u = StampedInput::from_slice(&[0.0], 0.0);
        let out = ekf_predict(&scalar(0.0, 1.0), &model, &u, 1.0).unwrap();
        assert_eq!(out.covariance[(0, 0)], 2.0);
        assert_eq!(out.stamp(), Some(1.0));
    }

    #[test]
    fn noiseless_identity_keeps_belief() {
        let model = LinearProcess::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let u = StampedInput::from_slice(&[0.0], 0.0);
        let b = scalar(0.7, 0.3);
        let out = ekf_predict(&b, &model, &u, 0.0).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn scalar_correction_hand_values() {
        let meas =
            StampedMeasurement::new(DVector::from_element(1, 2.0), 0.0, Arc::new(Direct(1.0))).unwrap();
        let out = ekf_correct(&scalar(0.0, 2.0), &meas).unwrap();
        assert!((out.mean.as_vector().unwrap()[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((out.covariance[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        let joseph = ekf_correct_with(&scalar(0.0, 2.0), &meas, CovarianceUpdate::Joseph).unwrap();
        assert!((joseph.covariance[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn huge_noise_means_no_update() {
        let meas =
            StampedMeasurement::new(DVector::from_element(1, 5.0), 0.0, Arc::new(Direct(1e12))).unwrap();
        let out = ekf_correct(&scalar(1.0, 1.0), &meas).unwrap();
        assert!((out.mean.as_vector().unwrap()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stamps_are_enforced() {
        let meas =
            StampedMeasurement::new(DVector::from_element(1, 5.0), 0.5, Arc::new(Direct(1.0))).unwrap();
        assert!(ekf_correct(&scalar(1.0, 1.0), &meas).is_err());
        let unstamped = GaussianBelief::new(ManifoldPoint::from_slice(&[0.0]), DMatrix::identity(1, 1)).unwrap();
        let model = LinearProcess::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let u = StampedInput::from_slice(&[0.0], 0.0);
        assert!(ekf_predict(&unstamped, &model, &u, 1.0).is_err());
    }

    #[test]
    fn se3_prediction_stays_psd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for side in [Side::Left, Side::Right] {
            let mut b = GaussianBelief::new(
                ManifoldPoint::group(GroupElement::identity(GroupKind::SE3), side).with_stamp(0.0),
                DMatrix::identity(6, 6) * 0.01,
            )
            .unwrap();
            for _ in 0..1000 {
                let u = StampedInput::new(DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)), 0.0)
                    .with_covariance(DMatrix::identity(6, 6) * 1e-3)
                    .unwrap();
                b = ekf_predict(&b, &BodyFrameVelocity, &u, 0.01).unwrap();
                assert!((&b.covariance - b.covariance.transpose()).amax() == 0.0);
                assert!(b.covariance.symmetric_eigenvalues().min() > -1e-10);
            }
        }
    }
}
