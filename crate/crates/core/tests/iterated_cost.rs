//! The iterated EKF posterior never scores worse than the EKF posterior on
//! the MAP objective of a single update.

mod common;

use std::sync::Arc;

use common::{random_element, rng, uniform_vec};
use nalgebra::{DMatrix, DVector};
use navkit::batch::{make_measurement_term, make_prior_term, BatchProblem};
use navkit::filters::{ekf_correct, iterated_ekf_correct};
use navkit::models::{MeasurementModel, RangeToAnchor, StampedMeasurement};
use navkit::{GaussianBelief, GroupKind, ManifoldPoint, Side};

#[test]
fn iterated_posterior_cost_is_not_above_ekf() {
    let mut g = rng(77);
    let model = Arc::new(RangeToAnchor::new([1.0, 0.5, -0.3], 1e-4));
    let mut strictly_better = 0;
    for case in 0..25 {
        let side = if case % 2 == 0 { Side::Right } else { Side::Left };
        let truth = ManifoldPoint::group(random_element(&mut g, GroupKind::SE3), side);
        let mean = truth.oplus(&uniform_vec(&mut g, 6, 0.6)).unwrap().with_stamp(0.0).with_id("x");
        let prior = GaussianBelief::new(mean, DMatrix::identity(6, 6) * 0.3).unwrap();
        let y = model.evaluate(&truth).unwrap() + DVector::from_element(1, 0.01);
        let meas = StampedMeasurement::new(y, 0.0, model.clone()).unwrap().with_target("x");

        let ekf = ekf_correct(&prior, &meas).unwrap();
        let it = iterated_ekf_correct(&prior, &meas, 20, 1e-12).unwrap();
        let problem = BatchProblem::new(
            vec![prior.mean.clone()],
            vec![make_prior_term(&prior).unwrap(), make_measurement_term(meas.clone()).unwrap()],
        )
        .unwrap();
        let cost = |b: &GaussianBelief| problem.cost(&[b.mean.clone().with_id("x")]).unwrap();
        let (c_ekf, c_it) = (cost(&ekf), cost(&it.belief));
        assert!(c_it <= c_ekf * (1.0 + 1e-12) + 1e-14, "case {case}: {c_it} > {c_ekf}");
        assert!((c_it - it.cost).abs() < 1e-9 * c_it.max(1.0), "case {case}: reported {} vs {c_it}", it.cost);
        if c_it < 0.99 * c_ekf {
            strictly_better += 1;
        }
    }
    assert!(strictly_better > 0);
}
