//! Sigma-point filters: unscented, spherical cubature and Gauss-Hermite.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_measurement_stamp, innovation_inverse, psd_sqrt, require_stamp};
use crate::error::{contract, Result};
use crate::models::{ProcessModel, StampedInput, StampedMeasurement};
use crate::state::{symmetrize, GaussianBelief, ManifoldPoint};

const MEAN_TOL: f64 = 1e-10;
const MEAN_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SigmaPointScheme {
    Unscented { kappa: f64 },
    SphericalCubature,
    /// Tensor-product Gauss-Hermite rule with `order` nodes per axis (odd).
    /// Order 1 is the single point at the mean and reproduces only the mean.
    GaussHermite { order: usize },
}

impl SigmaPointScheme {
    pub fn unscented() -> Self {
        SigmaPointScheme::Unscented { kappa: 2.0 }
    }

    pub fn gauss_hermite() -> Self {
        SigmaPointScheme::GaussHermite { order: 3 }
    }
}

/// Unit sigma point of a standard normal and its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPoint {
    pub point: DVector<f64>,
    pub weight: f64,
}

pub fn generate_sigma_points(dim: usize, scheme: SigmaPointScheme) -> Result<Vec<SigmaPoint>> {
    if dim == 0 {
        return Err(contract("sigma points need dim >= 1"));
    }
    let axis = |i: usize, s: f64| DVector::from_fn(dim, |j, _| if i == j { s } else { 0.0 });
    match scheme {
        SigmaPointScheme::Unscented { kappa } => {
            let lambda = dim as f64 + kappa;
            if !(lambda > 0.0) {
                return Err(contract("unscented transform needs dim + kappa > 0"));
            }
            let s = lambda.sqrt();
            let w = 0.5 / lambda;
            let mut pts = vec![SigmaPoint {
                point: DVector::zeros(dim),
                weight: kappa / lambda,
            }];
            for i in 0..dim {
                pts.push(SigmaPoint { point: axis(i, s), weight: w });
            }
            for i in 0..dim {
                pts.push(SigmaPoint { point: axis(i, -s), weight: w });
            }
            Ok(pts)
        }
        SigmaPointScheme::SphericalCubature => {
            let s = (dim as f64).sqrt();
            let w = 0.5 / dim as f64;
            let mut pts = Vec::with_capacity(2 * dim);
            for i in 0..dim {
                pts.push(SigmaPoint { point: axis(i, s), weight: w });
            }
            for i in 0..dim {
                pts.push(SigmaPoint { point: axis(i, -s), weight: w });
            }
            Ok(pts)
        }
        SigmaPointScheme::GaussHermite { order } => {
            if order == 0 || order % 2 == 0 {
                return Err(contract(format!(
                    "Gauss-Hermite order must be odd and >= 1, got {order}"
                )));
            }
            let (nodes, weights) = hermite_rule(order);
            let total = order
                .checked_pow(dim as u32)
                .ok_or_else(|| contract("Gauss-Hermite point count overflows"))?;
            let mut pts = Vec::with_capacity(total);
            let mut idx = vec![0usize; dim];
            for _ in 0..total {
                let point = DVector::from_fn(dim, |j, _| nodes[idx[j]]);
                let weight = idx.iter().map(|&k| weights[k]).product();
                pts.push(SigmaPoint { point, weight });
                for digit in idx.iter_mut() {
                    *digit += 1;
                    if *digit < order {
                        break;
                    }
                    *digit = 0;
                }
            }
            Ok(pts)
        }
    }
}

/// Nodes and weights of the `m`-point rule for the standard normal density,
/// from the eigen-decomposition of the probabilists' Hermite Jacobi matrix.
fn hermite_rule(m: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Enforce the symmetry of the rule exactly.
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        let j = m - 1 - i;
        nodes[i] = 0.5 * (pairs[i].0 - pairs[j].0);
        weights[i] = 0.5 * (pairs[i].1 + pairs[j].1);
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    (nodes, weights)
}

/// Iterated on-manifold weighted mean starting from the first point. Returns
/// the mean and the number of updates applied before the step fell below
/// tolerance.
pub(crate) fn weighted_mean(points: &[ManifoldPoint], weights: &[f64]) -> Result<(ManifoldPoint, usize)> {
    let mut mean = points[0].clone();
    let n = mean.dof();
    for it in 0..=MEAN_MAX_ITERS {
        let mut step = DVector::zeros(n);
        for (p, w) in points.iter().zip(weights) {
            step += p.ominus(&mean)? * *w;
        }
        if step.norm() < MEAN_TOL || it == MEAN_MAX_ITERS {
            return Ok((mean, it));
        }
        mean = mean.oplus(&step)?;
    }
    unreachable!()
}

fn spread(points: &[ManifoldPoint], weights: &[f64], mean: &ManifoldPoint) -> Result<DMatrix<f64>> {
    let n = mean.dof();
    let mut cov = DMatrix::zeros(n, n);
    for (p, w) in points.iter().zip(weights) {
        let d = p.ominus(mean)?;
        cov += &d * d.transpose() * *w;
    }
    Ok(cov)
}

/// Sigma-point prediction. When the input carries a covariance, state and
/// input noise are sampled jointly and the model's additive covariance (if
/// any) is added afterwards; otherwise only the state is sampled and the
/// model's full process covariance is added.
pub fn spkf_predict(
    belief: &GaussianBelief,
    model: &(impl ProcessModel + ?Sized),
    u: &StampedInput,
    dt: f64,
    scheme: SigmaPointScheme,
) -> Result<GaussianBelief> {
    let t = require_stamp(belief)?;
    if dt < 0.0 {
        return Err(contract(format!("prediction needs dt >= 0, got {dt}")));
    }
    let n = belief.dof();
    let (sqrt, p) = match &u.covariance {
        Some(qu) => {
            let p = qu.nrows();
            let mut joint = DMatrix::zeros(n + p, n + p);
            joint.view_mut((0, 0), (n, n)).copy_from(&belief.covariance);
            joint.view_mut((n, n), (p, p)).copy_from(qu);
            (psd_sqrt(&joint)?, p)
        }
        None => (psd_sqrt(&belief.covariance)?, 0),
    };
    let unit = generate_sigma_points(n + p, scheme)?;
    let mut points = Vec::with_capacity(unit.len());
    let mut weights = Vec::with_capacity(unit.len());
    for sp in &unit {
        let d = &sqrt * &sp.point;
        let x = belief.mean.oplus(&d.rows(0, n).into_owned())?;
        let ui = if p > 0 {
            u.with_value(&u.u + d.rows(n, p))
        } else {
            u.clone()
        };
        points.push(model.evaluate(&x, &ui, dt)?);
        weights.push(sp.weight);
    }
    let (mean, _) = weighted_mean(&points, &weights)?;
    let mut cov = spread(&points, &weights, &mean)?;
    if p > 0 {
        if let Some(q) = model.additive_covariance(&belief.mean, u, dt) {
            cov += q;
        }
    } else {
        cov += model.covariance(&belief.mean, u, dt)?;
    }
    GaussianBelief::new(mean.restamped(Some(t + dt)), cov)
}

/// Sigma-point correction with state-only sigma points.
pub fn spkf_correct(
    belief: &GaussianBelief,
    meas: &StampedMeasurement,
    scheme: SigmaPointScheme,
) -> Result<GaussianBelief> {
    check_measurement_stamp(belief, meas)?;
    let n = belief.dof();
    let sqrt = psd_sqrt(&belief.covariance)?;
    let unit = generate_sigma_points(n, scheme)?;
    let mut deltas = Vec::with_capacity(unit.len());
    let mut ys = Vec::with_capacity(unit.len());
    for sp in &unit {
        let d = &sqrt * &sp.point;
        ys.push(meas.model.evaluate(&belief.mean.oplus(&d)?)?);
        deltas.push(d);
    }
    let q = meas.y.len();
    let mut y_bar = DVector::zeros(q);
    for (y, sp) in ys.iter().zip(&unit) {
        y_bar += y * sp.weight;
    }
    let mut pyy = meas.model.covariance(&belief.mean)?;
    let mut pxy = DMatrix::zeros(n, q);
    for ((y, d), sp) in ys.iter().zip(&deltas).zip(&unit) {
        let dy = y - &y_bar;
        pyy += &dy * dy.transpose() * sp.weight;
        pxy += d * dy.transpose() * sp.weight;
    }
    let pyy = symmetrize(&pyy);
    let k = &pxy * innovation_inverse(&pyy)?;
    let mean = belief.mean.oplus(&(&k * (&meas.y - y_bar)))?;
    let cov = &belief.covariance - &k * &pyy * k.transpose();
    GaussianBelief::new(mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{ekf_correct, ekf_predict};
    use crate::lie::{GroupKind, Side, TangentVector};
    use crate::models::{BodyFrameVelocity, LinearProcess, MeasurementModel, RangeToAnchor};
    use std::sync::Arc;

    fn moments(pts: &[SigmaPoint], dim: usize) -> (f64, DVector<f64>, DMatrix<f64>) {
        let mut w = 0.0;
        let mut m1 = DVector::zeros(dim);
        let mut m2 = DMatrix::zeros(dim, dim);
        for p in pts {
            w += p.weight;
            m1 += &p.point * p.weight;
            m2 += &p.point * p.point.transpose() * p.weight;
        }
        (w, m1, m2)
    }

    #[test]
    fn unscented_one_dimensional() {
        let pts = generate_sigma_points(1, SigmaPointScheme::unscented()).unwrap();
        let s3 = 3f64.sqrt();
        let expect = [(0.0, 2.0 / 3.0), (s3, 1.0 / 6.0), (-s3, 1.0 / 6.0)];
        for (p, (x, w)) in pts.iter().zip(expect) {
            assert!((p.point[0] - x).abs() < 1e-15 && (p.weight - w).abs() < 1e-15);
        }
    }

    #[test]
    fn cubature_one_dimensional() {
        let pts = generate_sigma_points(1, SigmaPointScheme::SphericalCubature).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].point[0], 1.0);
        assert_eq!(pts[1].point[0], -1.0);
        assert_eq!(pts[0].weight, 0.5);
    }

    #[test]
    fn hermite_rules_integrate_polynomials() {
        let pts = generate_sigma_points(2, SigmaPointScheme::gauss_hermite()).unwrap();
        assert_eq!(pts.len(), 9);
        // E[x^4] = 3 and E[x^2 y^2] = 1 are within the degree-5 exactness of the 3-point rule.
        let e4: f64 = pts.iter().map(|p| p.weight * p.point[0].powi(4)).sum();
        let e22: f64 = pts.iter().map(|p| p.weight * (p.point[0] * p.point[1]).powi(2)).sum();
        assert!((e4 - 3.0).abs() < 1e-12 && (e22 - 1.0).abs() < 1e-12);
        let (nodes, weights) = hermite_rule(5);
        let e8: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(8)).sum();
        assert!((e8 - 105.0).abs() < 1e-9);
    }

    #[test]
    fn all_schemes_match_standard_normal_moments() {
        for scheme in [
            SigmaPointScheme::unscented(),
            SigmaPointScheme::Unscented { kappa: -0.5 },
            SigmaPointScheme::SphericalCubature,
            SigmaPointScheme::gauss_hermite(),
            SigmaPointScheme::GaussHermite { order: 5 },
        ] {
            for dim in 1..=4 {
                let pts = generate_sigma_points(dim, scheme).unwrap();
                let (w, m1, m2) = moments(&pts, dim);
                assert!((w - 1.0).abs() < 1e-12, "{scheme:?}");
                assert!(m1.amax() < 1e-12);
                assert!((m2 - DMatrix::identity(dim, dim)).amax() < 1e-12, "{scheme:?} {dim}");
            }
        }
        assert!(generate_sigma_points(2, SigmaPointScheme::GaussHermite { order: 4 }).is_err());
        assert!(generate_sigma_points(0, SigmaPointScheme::SphericalCubature).is_err());
    }

    fn linear_system() -> (GaussianBelief, LinearProcess, StampedInput) {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.2, 0.9]);
        let l = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let model = LinearProcess::new(f, l)
            .unwrap()
            .with_noise(DMatrix::identity(2, 2) * 0.01)
            .unwrap();
        let u = StampedInput::from_slice(&[1.0], 0.0)
            .with_covariance(DMatrix::identity(1, 1) * 0.5)
            .unwrap();
        let b = GaussianBelief::new(
            ManifoldPoint::from_slice(&[1.0, -1.0]).with_stamp(0.0),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
        )
        .unwrap();
        (b, model, u)
    }

    #[test]
    fn linear_prediction_matches_ekf() {
        let (b, model, u) = linear_system();
        let ekf = ekf_predict(&b, &model, &u, 0.1).unwrap();
        for scheme in [
            SigmaPointScheme::unscented(),
            SigmaPointScheme::SphericalCubature,
            SigmaPointScheme::gauss_hermite(),
        ] {
            let sp = spkf_predict(&b, &model, &u, 0.1, scheme).unwrap();
            assert!(sp.mean.ominus(&ekf.mean).unwrap().amax() < 1e-12);
            assert!((&sp.covariance - &ekf.covariance).amax() < 1e-12);
            assert_eq!(sp.stamp(), Some(0.1));
        }
    }

    #[derive(Debug)]
    struct Linear(DMatrix<f64>);

    impl MeasurementModel for Linear {
        fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>> {
            Ok(&self.0 * x.as_vector().unwrap())
        }
        fn output_dim(&self) -> usize {
            self.0.nrows()
        }
        fn covariance(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(self.0.nrows(), self.0.nrows()) * 0.2)
        }
    }

    #[test]
    fn linear_correction_matches_ekf() {
        let (b, _, _) = linear_system();
        let model = Arc::new(Linear(DMatrix::from_row_slice(1, 2, &[1.0, -0.5])));
        let meas = StampedMeasurement::new(DVector::from_element(1, 0.7), 0.0, model).unwrap();
        let ekf = ekf_correct(&b, &meas).unwrap();
        for scheme in [SigmaPointScheme::unscented(), SigmaPointScheme::SphericalCubature] {
            let sp = spkf_correct(&b, &meas, scheme).unwrap();
            assert!(sp.mean.ominus(&ekf.mean).unwrap().amax() < 1e-8);
            assert!((&sp.covariance - &ekf.covariance).amax() < 1e-8);
        }
    }

    #[test]
    fn degenerate_belief_propagates_the_mean() {
        let x = TangentVector::from_slice(GroupKind::SE3, &[0.1, 0.2, 0.3, 1.0, 2.0, 3.0])
            .unwrap()
            .exp();
        let b = GaussianBelief::new(
            ManifoldPoint::group(x, Side::Right).with_stamp(0.0),
            DMatrix::zeros(6, 6),
        )
        .unwrap();
        let u = StampedInput::from_slice(&[0.1, 0.0, -0.2, 1.0, 0.0, 0.5], 0.0)
            .with_covariance(DMatrix::zeros(6, 6))
            .unwrap();
        let sp = spkf_predict(&b, &BodyFrameVelocity, &u, 0.1, SigmaPointScheme::unscented()).unwrap();
        let direct = BodyFrameVelocity.evaluate(&b.mean, &u, 0.1).unwrap();
        assert!(sp.mean.ominus(&direct).unwrap().amax() < 1e-14);
        assert!(sp.covariance.amax() < 1e-14);

        let model = Arc::new(RangeToAnchor::new([0.0, 0.0, 0.0], 0.1));
        let meas = StampedMeasurement::new(DVector::from_element(1, 1.0), 0.0, model).unwrap();
        let out = spkf_correct(&b, &meas, SigmaPointScheme::SphericalCubature).unwrap();
        assert_eq!(out.mean, b.mean);
    }

    #[test]
    fn vector_mean_needs_one_update() {
        let pts: Vec<ManifoldPoint> = [[0.0, 1.0], [2.0, 3.0], [4.0, -1.0]]
            .iter()
            .map(|p| ManifoldPoint::from_slice(p))
            .collect();
        let (m, iters) = weighted_mean(&pts, &[0.5, 0.25, 0.25]).unwrap();
        assert_eq!(iters, 1);
        let v = m.as_vector().unwrap();
        assert!((v[0] - 1.5).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn group_mean_is_a_fixed_point() {
        let pts: Vec<ManifoldPoint> = [[0.3, 0.0, 0.1], [-0.2, 0.4, 0.0], [0.1, -0.3, 0.5]]
            .iter()
            .map(|p| {
                ManifoldPoint::group(TangentVector::from_slice(GroupKind::SO3, p).unwrap().exp(), Side::Left)
            })
            .collect();
        let w = [0.2, 0.5, 0.3];
        let (m, _) = weighted_mean(&pts, &w).unwrap();
        let mut s = DVector::zeros(3);
        for (p, wi) in pts.iter().zip(w) {
            s += p.ominus(&m).unwrap() * wi;
        }
        assert!(s.norm() < 1e-10);
    }
}
