//! Batch MAP estimation over a trajectory of states.
//!
//! The objective is a sum of whitened prior, process and measurement
//! residuals, minimized on-manifold with Gauss-Newton or Levenberg-Marquardt.

mod blocks;
mod solver;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Result};
use crate::models::{ProcessModel, StampedInput, StampedMeasurement};
use crate::state::{GaussianBelief, ManifoldPoint};

pub use solver::{solve, BatchSolution, ConvergenceReason, SolveMethod, SolveOptions, SolverReport};

#[derive(Clone)]
enum TermKind {
    Prior {
        mean: ManifoldPoint,
        whitening: DMatrix<f64>,
    },
    Process {
        model: Arc<dyn ProcessModel>,
        u: StampedInput,
        dt: f64,
    },
    Measurement {
        meas: StampedMeasurement,
    },
}

/// One whitened residual block of the objective.
#[derive(Clone)]
pub struct ResidualTerm {
    keys: Vec<String>,
    kind: TermKind,
}

impl std::fmt::Debug for ResidualTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            TermKind::Prior { .. } => "prior",
            TermKind::Process { .. } => "process",
            TermKind::Measurement { .. } => "measurement",
        };
        write!(f, "ResidualTerm({kind}, {:?})", self.keys)
    }
}

/// `L^-1` for `cov = L L^T`, so that `|L^-1 e|^2 = e^T cov^-1 e`.
pub fn whitening(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let chol = crate::state::symmetrize(cov)
        .cholesky()
        .ok_or_else(|| contract("term covariance is not positive definite"))?;
    chol.l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| contract("term covariance is singular"))
}

/// Prior `P^-1/2 (X_0 (-) X_prior)`, bound to the prior mean's `state_id`.
pub fn make_prior_term(prior: &GaussianBelief) -> Result<ResidualTerm> {
    let key = prior
        .mean
        .state_id
        .clone()
        .ok_or_else(|| contract("prior mean needs a state_id"))?;
    Ok(ResidualTerm {
        keys: vec![key],
        kind: TermKind::Prior {
            mean: prior.mean.clone(),
            whitening: whitening(&prior.covariance)?,
        },
    })
}

/// Process `Q^-1/2 (X_k (-) f(X_{k-1}, u))` between keys `from` and `to`.
pub fn make_process_term(
    model: Arc<dyn ProcessModel>,
    u: StampedInput,
    dt: f64,
    from: impl Into<String>,
    to: impl Into<String>,
) -> ResidualTerm {
    ResidualTerm {
        keys: vec![from.into(), to.into()],
        kind: TermKind::Process { model, u, dt },
    }
}

/// Measurement `R^-1/2 (y - g(X))` bound to `meas.target_state_id`.
pub fn make_measurement_term(meas: StampedMeasurement) -> Result<ResidualTerm> {
    let key = meas
        .target_state_id
        .clone()
        .ok_or_else(|| contract("measurement term needs a target_state_id"))?;
    Ok(ResidualTerm {
        keys: vec![key],
        kind: TermKind::Measurement { meas },
    })
}

impl ResidualTerm {
    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn dim(&self, vars: &[&ManifoldPoint]) -> usize {
        match &self.kind {
            TermKind::Measurement { meas } => meas.y.len(),
            _ => vars.last().map(|v| v.dof()).unwrap_or(0),
        }
    }

    /// Unwhitened error and its covariance.
    fn raw(&self, vars: &[&ManifoldPoint]) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        match &self.kind {
            TermKind::Prior { mean, .. } => Ok((vars[0].ominus(mean)?, None)),
            TermKind::Process { model, u, dt } => {
                let pred = model.evaluate(vars[0], u, *dt)?;
                let cov = model.covariance(vars[0], u, *dt)?;
                Ok((vars[1].ominus(&pred)?, Some(cov)))
            }
            TermKind::Measurement { meas } => {
                let cov = meas.model.covariance(vars[0])?;
                Ok((&meas.y - meas.model.evaluate(vars[0])?, Some(cov)))
            }
        }
    }

    fn weight(&self, cov: Option<DMatrix<f64>>) -> Result<DMatrix<f64>> {
        match (&self.kind, cov) {
            (TermKind::Prior { whitening, .. }, _) => Ok(whitening.clone()),
            (_, Some(c)) => whitening(&c),
            _ => unreachable!(),
        }
    }

    /// Whitened residual.
    pub fn evaluate(&self, vars: &[&ManifoldPoint]) -> Result<DVector<f64>> {
        self.check_arity(vars)?;
        let (e, cov) = self.raw(vars)?;
        Ok(self.weight(cov)? * e)
    }

    /// Unwhitened error `e` and `e^T cov^-1 e`, computed without whitening.
    pub fn mahalanobis(&self, vars: &[&ManifoldPoint]) -> Result<f64> {
        self.check_arity(vars)?;
        let (e, cov) = self.raw(vars)?;
        let info = match (&self.kind, cov) {
            (TermKind::Prior { whitening, .. }, _) => whitening.transpose() * whitening,
            (_, Some(c)) => c
                .try_inverse()
                .ok_or_else(|| contract("term covariance is singular"))?,
            _ => unreachable!(),
        };
        Ok((e.transpose() * info * &e)[0])
    }

    /// Whitened residual and its Jacobian with respect to each key. The
    /// whitening matrix is treated as constant at the linearization point.
    pub fn linearize(&self, vars: &[&ManifoldPoint]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        self.check_arity(vars)?;
        let (e, cov) = self.raw(vars)?;
        let w = self.weight(cov)?;
        let blocks = match &self.kind {
            TermKind::Prior { mean, .. } => {
                let (jx, _) = ManifoldPoint::ominus_jacobians(vars[0], mean)?;
                vec![&w * jx]
            }
            TermKind::Process { model, u, dt } => {
                let pred = model.evaluate(vars[0], u, *dt)?;
                let f = model.jacobian(vars[0], u, *dt)?;
                let (jx, jy) = ManifoldPoint::ominus_jacobians(vars[1], &pred)?;
                vec![&w * jy * f, &w * jx]
            }
            TermKind::Measurement { meas } => vec![-(&w * meas.model.jacobian(vars[0])?)],
        };
        Ok((w * e, blocks))
    }

    fn check_arity(&self, vars: &[&ManifoldPoint]) -> Result<()> {
        if vars.len() != self.keys.len() {
            return Err(contract(format!(
                "term touches {} states, got {}",
                self.keys.len(),
                vars.len()
            )));
        }
        Ok(())
    }
}

/// Ordered variables and the residual terms that connect them.
#[derive(Debug, Clone)]
pub struct BatchProblem {
    variables: Vec<ManifoldPoint>,
    terms: Vec<ResidualTerm>,
    term_indices: Vec<Vec<usize>>,
}

impl BatchProblem {
    pub fn new(variables: Vec<ManifoldPoint>, terms: Vec<ResidualTerm>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, v) in variables.iter().enumerate() {
            let id = v
                .state_id
                .as_ref()
                .ok_or_else(|| contract(format!("variable {i} has no state_id")))?;
            if index.insert(id.clone(), i).is_some() {
                return Err(contract(format!("duplicate state_id '{id}'")));
            }
        }
        let term_indices = terms
            .iter()
            .map(|t| {
                t.keys
                    .iter()
                    .map(|k| {
                        index
                            .get(k)
                            .copied()
                            .ok_or_else(|| contract(format!("term key '{k}' has no variable")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            variables,
            terms,
            term_indices,
        })
    }

    pub fn variables(&self) -> &[ManifoldPoint] {
        &self.variables
    }

    pub fn terms(&self) -> &[ResidualTerm] {
        &self.terms
    }

    pub fn total_dof(&self) -> usize {
        self.variables.iter().map(|v| v.dof()).sum()
    }

    pub fn residual_dim(&self) -> usize {
        self.terms
            .iter()
            .zip(&self.term_indices)
            .map(|(t, idx)| t.dim(&self.refs(&self.variables, idx)))
            .sum()
    }

    fn refs<'a>(&self, vars: &'a [ManifoldPoint], idx: &[usize]) -> Vec<&'a ManifoldPoint> {
        idx.iter().map(|&i| &vars[i]).collect()
    }

    /// Total cost `sum |r_i|^2` over whitened residuals.
    pub fn cost(&self, vars: &[ManifoldPoint]) -> Result<f64> {
        let mut c = 0.0;
        for (t, idx) in self.terms.iter().zip(&self.term_indices) {
            c += t.evaluate(&self.refs(vars, idx))?.norm_squared();
        }
        Ok(c)
    }

    /// Total cost `sum e_i^T Sigma_i^-1 e_i` from unwhitened errors.
    pub fn unwhitened_cost(&self, vars: &[ManifoldPoint]) -> Result<f64> {
        let mut c = 0.0;
        for (t, idx) in self.terms.iter().zip(&self.term_indices) {
            c += t.mahalanobis(&self.refs(vars, idx))?;
        }
        Ok(c)
    }

    /// Dense stacked whitened residual and Jacobian.
    pub fn stacked(&self, vars: &[ManifoldPoint]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let offsets = self.offsets();
        let rows = self.residual_dim();
        let mut r = DVector::zeros(rows);
        let mut j = DMatrix::zeros(rows, self.total_dof());
        let mut row = 0;
        for (t, idx) in self.terms.iter().zip(&self.term_indices) {
            let (res, blocks) = t.linearize(&self.refs(vars, idx))?;
            let m = res.len();
            r.rows_mut(row, m).copy_from(&res);
            for (&vi, b) in idx.iter().zip(&blocks) {
                j.view_mut((row, offsets[vi]), (m, b.ncols())).copy_from(b);
            }
            row += m;
        }
        Ok((r, j))
    }

    pub(crate) fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.variables.len());
        let mut o = 0;
        for v in &self.variables {
            out.push(o);
            o += v.dof();
        }
        out
    }

    /// Whitened Jacobian sparsity as CSV: one row per nonzero block.
    pub fn sparsity_csv(&self) -> Result<String> {
        let offsets = self.offsets();
        let mut out = String::from("term,key,row,col,rows,cols\n");
        let mut row = 0;
        for (ti, (t, idx)) in self.terms.iter().zip(&self.term_indices).enumerate() {
            let m = t.dim(&self.refs(&self.variables, idx));
            for (k, &vi) in t.keys.iter().zip(idx) {
                let _ = writeln!(out, "{ti},{k},{row},{},{m},{}", offsets[vi], self.variables[vi].dof());
            }
            row += m;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{GroupKind, Side, TangentVector};
    use crate::models::{BodyFrameVelocity, LinearProcess, MeasurementModel, RangeToAnchor};
    use crate::numdiff::{self, DiffScheme, Fallible};

    fn scalar(x: f64, id: &str) -> ManifoldPoint {
        ManifoldPoint::from_slice(&[x]).with_id(id)
    }

    #[derive(Debug)]
    struct Direct(f64);

    impl MeasurementModel for Direct {
        fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>> {
            Ok(x.as_vector().unwrap().clone())
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn covariance(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(1, 1, self.0))
        }
    }

    #[test]
    fn prior_term_values() {
        let prior = GaussianBelief::new(scalar(0.0, "x0"), DMatrix::from_element(1, 1, 4.0)).unwrap();
        let t = make_prior_term(&prior).unwrap();
        assert_eq!(t.evaluate(&[&scalar(0.0, "x0")]).unwrap()[0], 0.0);
        assert_eq!(t.evaluate(&[&scalar(2.0, "x0")]).unwrap()[0], 1.0);
        let singular = GaussianBelief::new(scalar(0.0, "x0"), DMatrix::zeros(1, 1)).unwrap();
        assert!(make_prior_term(&singular).is_err());
    }

    #[test]
    fn process_term_values() {
        let model = Arc::new(
            LinearProcess::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
                .unwrap()
                .with_noise(DMatrix::identity(1, 1))
                .unwrap(),
        );
        let u = StampedInput::from_slice(&[0.5], 0.0);
        let t = make_process_term(model, u, 1.0, "a", "b");
        let r = t.evaluate(&[&scalar(1.0, "a"), &scalar(1.5, "b")]).unwrap();
        assert_eq!(r[0], 0.0);
        let r = t.evaluate(&[&scalar(1.0, "a"), &scalar(4.0, "b")]).unwrap();
        assert_eq!(r[0], 4.0 - 1.0 - 0.5);
    }

    #[test]
    fn measurement_term_values() {
        let meas = StampedMeasurement::new(DVector::from_element(1, 3.0), 0.0, Arc::new(Direct(4.0)))
            .unwrap()
            .with_target("x");
        let t = make_measurement_term(meas).unwrap();
        assert_eq!(t.evaluate(&[&scalar(1.0, "x")]).unwrap()[0], 1.0);
        assert_eq!(t.evaluate(&[&scalar(3.0, "x")]).unwrap()[0], 0.0);
    }

    fn check_jacobians(t: &ResidualTerm, vars: &[ManifoldPoint]) {
        let refs: Vec<&ManifoldPoint> = vars.iter().collect();
        let (_, blocks) = t.linearize(&refs).unwrap();
        // Whitening is held at the linearization point, as in the solver.
        let w = t.weight(t.raw(&refs).unwrap().1).unwrap();
        for (k, block) in blocks.iter().enumerate() {
            let f = Fallible(|p: &ManifoldPoint| {
                let mut v: Vec<&ManifoldPoint> = refs.clone();
                v[k] = p;
                t.raw(&v).map(|(e, _)| ManifoldPoint::vector(&w * e))
            });
            let num = numdiff::jacobian(&f, &vars[k], DiffScheme::forward()).unwrap();
            assert!((block - &num).amax() < 1e-5, "{t:?} key {k}: {}", (block - num).amax());
        }
    }

    #[test]
    fn term_jacobians_match_numdiff() {
        for side in [Side::Left, Side::Right] {
            let x0 = ManifoldPoint::group(
                TangentVector::from_slice(GroupKind::SE3, &[0.3, -0.1, 0.2, 1.0, 2.0, -1.0]).unwrap().exp(),
                side,
            )
            .with_id("x0");
            let x1 = ManifoldPoint::group(
                TangentVector::from_slice(GroupKind::SE3, &[0.5, 0.1, 0.1, 1.3, 2.2, -0.7]).unwrap().exp(),
                side,
            )
            .with_id("x1");
            let prior = GaussianBelief::new(
                x0.oplus(&DVector::from_vec(vec![0.1, 0.0, -0.1, 0.2, 0.3, 0.0])).unwrap(),
                DMatrix::identity(6, 6) * 0.5,
            )
            .unwrap();
            check_jacobians(&make_prior_term(&prior).unwrap(), std::slice::from_ref(&x0));
            let u = StampedInput::from_slice(&[0.2, 0.1, 0.0, 1.0, 0.5, 0.0], 0.0)
                .with_covariance(DMatrix::identity(6, 6) * 0.1)
                .unwrap();
            let t = make_process_term(Arc::new(BodyFrameVelocity), u, 0.5, "x0", "x1");
            check_jacobians(&t, &[x0.clone(), x1.clone()]);
            let meas = StampedMeasurement::new(
                DVector::from_element(1, 4.0),
                0.0,
                Arc::new(RangeToAnchor::new([3.0, -1.0, 2.0], 0.01)),
            )
            .unwrap()
            .with_target("x1");
            check_jacobians(&make_measurement_term(meas).unwrap(), &[x1]);
        }
    }

    #[test]
    fn whitened_and_raw_costs_agree() {
        let x0 = scalar(0.3, "a");
        let x1 = scalar(-1.2, "b");
        let prior = GaussianBelief::new(scalar(0.0, "a"), DMatrix::from_element(1, 1, 2.5)).unwrap();
        let model = Arc::new(
            LinearProcess::new(DMatrix::from_element(1, 1, 0.9), DMatrix::identity(1, 1))
                .unwrap()
                .with_noise(DMatrix::from_element(1, 1, 0.3))
                .unwrap(),
        );
        let meas = StampedMeasurement::new(DVector::from_element(1, -1.0), 0.0, Arc::new(Direct(0.7)))
            .unwrap()
            .with_target("b");
        let problem = BatchProblem::new(
            vec![x0, x1],
            vec![
                make_prior_term(&prior).unwrap(),
                make_process_term(model, StampedInput::from_slice(&[0.1], 0.0), 1.0, "a", "b"),
                make_measurement_term(meas).unwrap(),
            ],
        )
        .unwrap();
        let vars = problem.variables().to_vec();
        let a = problem.cost(&vars).unwrap();
        let b = problem.unwhitened_cost(&vars).unwrap();
        assert!((a - b).abs() < 1e-10);
        let csv = problem.sparsity_csv().unwrap();
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let prior = GaussianBelief::new(scalar(0.0, "zz"), DMatrix::identity(1, 1)).unwrap();
        assert!(BatchProblem::new(vec![scalar(0.0, "a")], vec![make_prior_term(&prior).unwrap()]).is_err());
        assert!(BatchProblem::new(vec![scalar(0.0, "a"), scalar(1.0, "a")], vec![]).is_err());
    }
}
