//! Iterated EKF: the correction solved as a Gauss-Newton problem on the
//! prior-plus-measurement objective, relinearizing at each iterate.

use nalgebra::{DMatrix, DVector};

use super::{check_measurement_stamp, innovation_inverse};
use crate::error::{contract, Result};
use crate::models::StampedMeasurement;
use crate::state::{symmetrize, GaussianBelief, ManifoldPoint};

#[derive(Debug, Clone)]
pub struct IteratedCorrection {
    pub belief: GaussianBelief,
    /// Number of Gauss-Newton updates applied.
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the last computed step.
    pub step_norm: f64,
    /// Objective `|X - X_prior|^2_P + |y - g(X)|^2_R` at the returned mean.
    pub cost: f64,
}

struct Linearization {
    step: DVector<f64>,
    covariance: DMatrix<f64>,
    cost: f64,
}

/// Iterates
/// `K = J P J^T G^T (G J P J^T G^T + R)^-1`,
/// `z = y - g(X) + G J e`, `dx = K z - J e`, `X <- X (+) dx`,
/// where `e = X (-) X_prior` and `J` inverts the derivative of `e` with
/// respect to `X`. Stops when `|dx| < tol` or after `max_iters` updates and
/// returns the lowest-cost iterate with covariance `(I - K G) J P J^T`.
pub fn iterated_ekf_correct(
    belief: &GaussianBelief,
    meas: &StampedMeasurement,
    max_iters: usize,
    tol: f64,
) -> Result<IteratedCorrection> {
    check_measurement_stamp(belief, meas)?;
    if max_iters == 0 {
        return Err(contract("iterated EKF needs max_iters >= 1"));
    }
    let prior = &belief.mean;
    let p_inv = information(&belief.covariance);
    let mut x = prior.clone();
    let mut lin = linearize(belief, &p_inv, meas, &x)?;
    let mut best = (lin.cost, x.clone(), lin.covariance.clone());
    let mut iterations = 0;
    let mut converged = lin.step.norm() < tol;
    while !converged && iterations < max_iters {
        x = x.oplus(&lin.step)?;
        iterations += 1;
        lin = linearize(belief, &p_inv, meas, &x)?;
        if lin.cost < best.0 {
            best = (lin.cost, x.clone(), lin.covariance.clone());
        }
        converged = lin.step.norm() < tol;
    }
    if !converged {
        log::debug!("iterated EKF stopped after {iterations} updates without converging");
    }
    let (cost, mean, cov) = best;
    Ok(IteratedCorrection {
        belief: GaussianBelief::new(mean, cov)?,
        iterations,
        converged,
        step_norm: lin.step.norm(),
        cost,
    })
}

fn information(p: &DMatrix<f64>) -> DMatrix<f64> {
    match p.clone().cholesky() {
        Some(c) => c.inverse(),
        None => p
            .clone()
            .pseudo_inverse(1e-12)
            .unwrap_or_else(|_| DMatrix::zeros(p.nrows(), p.ncols())),
    }
}

fn linearize(
    belief: &GaussianBelief,
    p_inv: &DMatrix<f64>,
    meas: &StampedMeasurement,
    x: &ManifoldPoint,
) -> Result<Linearization> {
    let prior = &belief.mean;
    let e = x.ominus(prior)?;
    let (de_dx, _) = ManifoldPoint::ominus_jacobians(x, prior)?;
    let j = de_dx
        .try_inverse()
        .ok_or_else(|| contract("prior error Jacobian is singular"))?;
    let g = meas.model.jacobian(x)?;
    let r = meas.model.covariance(x)?;
    let resid = &meas.y - meas.model.evaluate(x)?;

    let p = symmetrize(&(&j * &belief.covariance * j.transpose()));
    let pg = &p * g.transpose();
    let s = symmetrize(&(&g * &pg + &r));
    let k = &pg * innovation_inverse(&s)?;
    let je = &j * &e;
    let z = &resid + &g * &je;
    let step = &k * z - je;
    let n = belief.dof();
    let covariance = (DMatrix::identity(n, n) - &k * &g) * p;

    let r_inv = information(&r);
    let cost = (e.transpose() * p_inv * &e)[0] + (resid.transpose() * r_inv * &resid)[0];
    Ok(Linearization {
        step,
        covariance,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::ekf_correct;
    use crate::lie::{GroupElement, GroupKind, Side, TangentVector};
    use crate::models::{MeasurementModel, RangeToAnchor};
    use std::sync::Arc;

    #[derive(Debug)]
    struct Linear(DMatrix<f64>);

    impl MeasurementModel for Linear {
        fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>> {
            Ok(&self.0 * x.as_vector().unwrap())
        }
        fn output_dim(&self) -> usize {
            self.0.nrows()
        }
        fn jacobian(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
            Ok(self.0.clone())
        }
        fn covariance(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(self.0.nrows(), self.0.nrows()) * 0.5)
        }
    }

    #[test]
    fn linear_model_matches_ekf_in_one_update() {
        let b = GaussianBelief::new(
            ManifoldPoint::from_slice(&[1.0, -1.0]).with_stamp(2.0),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        let model = Arc::new(Linear(DMatrix::from_row_slice(1, 2, &[1.0, 2.0])));
        let meas = StampedMeasurement::new(DVector::from_element(1, 3.0), 2.0, model).unwrap();
        let ekf = ekf_correct(&b, &meas).unwrap();
        let it = iterated_ekf_correct(&b, &meas, 1, 1e-10).unwrap();
        assert!(it.converged);
        assert_eq!(it.iterations, 1);
        let dm = ekf.mean.ominus(&it.belief.mean).unwrap();
        assert!(dm.amax() < 1e-12);
        assert!((&ekf.covariance - &it.belief.covariance).amax() < 1e-12);
    }

    fn range_problem() -> (GaussianBelief, Vec<StampedMeasurement>) {
        let truth = GroupElement::identity(GroupKind::SE3);
        let prior_mean = TangentVector::from_slice(GroupKind::SE3, &[0.3, -0.2, 0.5, 2.0, -1.5, 1.0])
            .unwrap()
            .exp();
        let b = GaussianBelief::new(
            ManifoldPoint::group(prior_mean, Side::Right).with_stamp(0.0),
            DMatrix::identity(6, 6) * 4.0,
        )
        .unwrap();
        let anchors = [[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]];
        let meas = anchors
            .iter()
            .map(|a| {
                let model = Arc::new(RangeToAnchor::new(*a, 0.01));
                let y = model.evaluate(&ManifoldPoint::group(truth.clone(), Side::Right)).unwrap();
                StampedMeasurement::new(y, 0.0, model).unwrap()
            })
            .collect();
        (b, meas)
    }

    #[test]
    fn iterating_lowers_the_map_cost() {
        let (b, meas) = range_problem();
        for m in &meas {
            let ekf = ekf_correct(&b, m).unwrap();
            let it = iterated_ekf_correct(&b, m, 20, 1e-10).unwrap();
            let p_inv = b.covariance.clone().try_inverse().unwrap();
            let ekf_cost = linearize(&b, &p_inv, m, &ekf.mean).unwrap().cost;
            assert!(it.cost <= ekf_cost + 1e-12, "{} > {}", it.cost, ekf_cost);
            if it.converged {
                assert!(it.step_norm < 1e-10);
            }
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let (b, meas) = range_problem();
        let it = iterated_ekf_correct(&b, &meas[0], 1, 1e-30).unwrap();
        assert!(!it.converged);
        assert_eq!(it.iterations, 1);
    }
}
