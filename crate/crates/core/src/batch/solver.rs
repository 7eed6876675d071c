//! Gauss-Newton and Levenberg-Marquardt on the manifold.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::blocks::NormalEquations;
use super::BatchProblem;
use crate::error::{contract, Error, Result};
use crate::state::ManifoldPoint;

/// Below this many variables the normal equations are solved densely.
pub const DENSE_LIMIT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    GaussNewton,
    LevenbergMarquardt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub method: SolveMethod,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Stop once `|step| < step_tol (|x| + step_tol)`, with `|x|` the norm
    /// of all state entries.
    pub step_tol: f64,
    pub compute_covariance: bool,
    pub allow_underdetermined: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: SolveMethod::GaussNewton,
            max_iters: 100,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            compute_covariance: false,
            allow_underdetermined: false,
        }
    }
}

impl SolveOptions {
    pub fn levenberg_marquardt() -> Self {
        Self {
            method: SolveMethod::LevenbergMarquardt,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceReason {
    GradientTol,
    StepTol,
    MaxIters,
    /// LM damping exceeded its ceiling without finding a descent step.
    DampingOverflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub reason: ConvergenceReason,
    pub cost_trace: Vec<f64>,
}

impl SolverReport {
    pub fn converged(&self) -> bool {
        matches!(self.reason, ConvergenceReason::GradientTol | ConvergenceReason::StepTol)
    }

    pub fn cost_trace_csv(&self) -> String {
        let mut out = String::from("iteration,cost\n");
        for (i, c) in self.cost_trace.iter().enumerate() {
            let _ = writeln!(out, "{i},{c:.17e}");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BatchSolution {
    pub variables: Vec<ManifoldPoint>,
    /// Per-variable posterior covariance blocks, when requested.
    pub marginals: Option<Vec<DMatrix<f64>>>,
    /// Full posterior covariance, when requested and solved densely.
    pub covariance: Option<DMatrix<f64>>,
    pub report: SolverReport,
}

const LAMBDA_MAX: f64 = 1e10;

pub fn solve(problem: &BatchProblem, opts: &SolveOptions) -> Result<BatchSolution> {
    let (rdim, dof) = (problem.residual_dim(), problem.total_dof());
    if rdim < dof {
        if !opts.allow_underdetermined {
            return Err(contract(format!(
                "problem has {rdim} residuals for {dof} unknowns; set allow_underdetermined to proceed"
            )));
        }
        log::warn!("batch problem is underdetermined ({rdim} residuals, {dof} unknowns)");
    }
    let dense = problem.variables().len() < DENSE_LIMIT;
    let mut vars = problem.variables().to_vec();
    let mut cost = problem.cost(&vars)?;
    let mut trace = vec![cost];
    let initial_cost = cost;
    let mut iterations = 0;
    let mut lambda: Option<f64> = None;
    let mut reason = ConvergenceReason::MaxIters;

    'outer: while iterations < opts.max_iters {
        let ne = NormalEquations::build(problem, &vars)?;
        if ne.grad_inf_norm() < opts.grad_tol {
            reason = ConvergenceReason::GradientTol;
            break;
        }
        match opts.method {
            SolveMethod::GaussNewton => {
                let step = ne.solve(0.0, dense).map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!(
                        "{m}; Gauss-Newton failed, try Levenberg-Marquardt"
                    )),
                    other => other,
                })?;
                vars = apply(&vars, &step)?;
                cost = problem.cost(&vars)?;
                trace.push(cost);
                iterations += 1;
                if step_converged(&step, &vars, opts.step_tol) {
                    reason = ConvergenceReason::StepTol;
                    break;
                }
            }
            SolveMethod::LevenbergMarquardt => {
                let mut lam = lambda.unwrap_or_else(|| 1e-4 * ne.mean_diagonal().max(f64::MIN_POSITIVE));
                loop {
                    if lam > LAMBDA_MAX {
                        reason = ConvergenceReason::DampingOverflow;
                        break 'outer;
                    }
                    let step = match ne.solve(lam, dense) {
                        Ok(s) => s,
                        Err(_) => {
                            lam *= 10.0;
                            continue;
                        }
                    };
                    let small = step_converged(&step, &vars, opts.step_tol);
                    let cand = apply(&vars, &step)?;
                    let c = problem.cost(&cand)?;
                    if c < cost {
                        vars = cand;
                        cost = c;
                        trace.push(cost);
                        iterations += 1;
                        lambda = Some(lam / 10.0);
                        if small {
                            reason = ConvergenceReason::StepTol;
                            break 'outer;
                        }
                        break;
                    }
                    if small {
                        reason = ConvergenceReason::StepTol;
                        break 'outer;
                    }
                    lam *= 10.0;
                }
            }
        }
    }

    let (marginals, covariance) = if opts.compute_covariance {
        let ne = NormalEquations::build(problem, &vars)?;
        let (m, c) = ne.marginals(dense)?;
        (Some(m), c)
    } else {
        (None, None)
    };
    Ok(BatchSolution {
        variables: vars,
        marginals,
        covariance,
        report: SolverReport {
            iterations,
            initial_cost,
            final_cost: cost,
            reason,
            cost_trace: trace,
        },
    })
}

fn apply(vars: &[ManifoldPoint], step: &[DVector<f64>]) -> Result<Vec<ManifoldPoint>> {
    vars.iter().zip(step).map(|(v, d)| v.oplus(d)).collect()
}

fn norm(step: &[DVector<f64>]) -> f64 {
    step.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt()
}

/// `|step| < tol (|x| + tol)`, with `|x|` the Frobenius norm of all vector
/// and group-matrix entries.
fn step_converged(step: &[DVector<f64>], vars: &[ManifoldPoint], tol: f64) -> bool {
    fn sq(x: &ManifoldPoint) -> f64 {
        if let Some(v) = x.as_vector() {
            v.norm_squared()
        } else if let Some(g) = x.as_group() {
            g.matrix().norm_squared()
        } else {
            x.children().map_or(0.0, |c| c.iter().map(sq).sum())
        }
    }
    let scale = vars.iter().map(sq).sum::<f64>().sqrt();
    norm(step) < tol * (scale + tol)
}
