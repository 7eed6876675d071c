//! On a linear-Gaussian system every estimator must reproduce the Kalman
//! filter and the stacked least-squares solution.

mod common;

use common::linear::{dense_least_squares, run_filter, solve_batch, system, STEPS};
use navkit::filters::{Ekf, Filter, IteratedEkf, SigmaPointFilter, SigmaPointScheme};

#[test]
fn filters_match_the_kalman_filter() {
    let sys = system(11);
    let oracle = sys.oracle();
    let filters: Vec<Box<dyn Filter>> = vec![
        Box::new(Ekf::default()),
        Box::new(IteratedEkf::default()),
        Box::new(SigmaPointFilter { scheme: SigmaPointScheme::unscented() }),
        Box::new(SigmaPointFilter { scheme: SigmaPointScheme::SphericalCubature }),
        Box::new(SigmaPointFilter { scheme: SigmaPointScheme::gauss_hermite() }),
    ];
    for f in &filters {
        let got = run_filter(&sys, f.as_ref());
        for (k, (b, (x, p))) in got.iter().zip(&oracle).enumerate() {
            let dx = (b.mean.as_vector().unwrap() - x).amax();
            let dp = (&b.covariance - p).amax();
            assert!(dx < 1e-8 && dp < 1e-8, "{} step {k}: mean {dx:e}, cov {dp:e}", f.name());
        }
    }
}

#[test]
fn batch_matches_dense_least_squares_and_filter() {
    let sys = system(23);
    let sol = solve_batch(&sys);
    assert!(sol.report.converged());

    let (z, cov) = dense_least_squares(&sys);
    let marg = sol.marginals.as_ref().unwrap();
    for k in 0..=STEPS {
        let got = sol.variables[k].as_vector().unwrap();
        assert!((got - z.rows(4 * k, 4)).amax() < 1e-8, "state {k}");
        let block = cov.view((4 * k, 4 * k), (4, 4));
        assert!((&marg[k] - block).amax() < 1e-8, "marginal {k}");
    }

    let (xf, pf) = sys.oracle().pop().unwrap();
    assert!((sol.variables[STEPS].as_vector().unwrap() - xf).amax() < 1e-8);
    assert!((&marg[STEPS] - pf).amax() < 1e-8);
}
