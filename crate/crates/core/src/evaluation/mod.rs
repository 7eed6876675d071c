//! Interpolation, consistency metrics and Monte-Carlo orchestration.

mod plot;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{contract, Result};
use crate::state::{symmetrize, GaussianBelief, ManifoldPoint};

pub use plot::{svg_line_plot, Series};

/// `X(t) = X_a (+) alpha (X_b (-) X_a)` with `alpha = (t - t_a)/(t_b - t_a)`,
/// for `t` within the stamps of the two states.
pub fn interpolate(x_a: &ManifoldPoint, x_b: &ManifoldPoint, t: f64) -> Result<ManifoldPoint> {
    interpolate_with(x_a, x_b, t, false)
}

/// As [`interpolate`], optionally allowing `t` outside `[t_a, t_b]`.
pub fn interpolate_with(
    x_a: &ManifoldPoint,
    x_b: &ManifoldPoint,
    t: f64,
    extrapolate: bool,
) -> Result<ManifoldPoint> {
    let (ta, tb) = match (x_a.stamp, x_b.stamp) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(contract("interpolation needs stamped states")),
    };
    if !(ta < tb) {
        return Err(contract(format!("interpolation needs t_a < t_b, got {ta} and {tb}")));
    }
    if !extrapolate && !(ta..=tb).contains(&t) {
        return Err(contract(format!("t = {t} outside [{ta}, {tb}]")));
    }
    let alpha = (t - ta) / (tb - ta);
    if alpha == 0.0 {
        return Ok(x_a.restamped(Some(t)));
    }
    let d = x_b.ominus(x_a)?;
    Ok(x_a.oplus(&(d * alpha))?.restamped(Some(t)))
}

/// `e^T P^-1 e` with `e = mean (-) truth`. A singular covariance falls back
/// to the pseudo-inverse with a warning.
pub fn nees(belief: &GaussianBelief, truth: &ManifoldPoint) -> Result<f64> {
    let e = belief.mean.ominus(truth)?;
    Ok(nees_of_error(&e, &belief.covariance))
}

pub(crate) fn nees_of_error(e: &DVector<f64>, p: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(p);
    match sym.clone().cholesky() {
        Some(c) => c.solve(e).dot(e),
        None => {
            log::warn!("NEES covariance is singular; using the pseudo-inverse");
            match sym.pseudo_inverse(1e-12) {
                Ok(pinv) => (e.transpose() * pinv * e)[0],
                Err(_) => f64::NAN,
            }
        }
    }
}

/// Two-sided confidence bounds on the average NEES of `trials` independent
/// runs: quantiles of `chi2(trials * dof) / trials`.
pub fn chi_square_envelope(dof: usize, trials: usize, level: f64) -> Result<(f64, f64)> {
    if dof == 0 || trials == 0 || !(level > 0.0 && level < 1.0) {
        return Err(contract("envelope needs dof >= 1, trials >= 1 and level in (0, 1)"));
    }
    let k = (dof * trials) as f64;
    let chi = ChiSquared::new(k).map_err(|e| contract(e.to_string()))?;
    let tail = 0.5 * (1.0 - level);
    let n = trials as f64;
    Ok((chi.inverse_cdf(tail) / n, chi.inverse_cdf(1.0 - tail) / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub level: f64,
    pub dof: usize,
    pub trials: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Envelope {
    pub fn new(dof: usize, trials: usize, level: f64) -> Result<Self> {
        let (lower, upper) = chi_square_envelope(dof, trials, level)?;
        Ok(Self {
            level,
            dof,
            trials,
            lower,
            upper,
        })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// One estimated step next to the truth it estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub stamp: f64,
    pub truth: ManifoldPoint,
    pub belief: GaussianBelief,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryTrace {
    entries: Vec<TraceEntry>,
}

impl TrajectoryTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, stamp: f64, truth: ManifoldPoint, belief: GaussianBelief) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if !(stamp > last.stamp) {
                return Err(contract("trace stamps must increase strictly"));
            }
            if !truth.same_structure(&last.truth) || !belief.mean.same_structure(&last.belief.mean) {
                return Err(contract("trace states must share one structure"));
            }
        }
        if !truth.same_structure(&belief.mean) {
            return Err(contract("truth and estimate differ in structure"));
        }
        self.entries.push(TraceEntry {
            stamp,
            truth,
            belief,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-step metrics of one estimated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub stamps: Vec<f64>,
    /// Tangent errors `estimate (-) truth`.
    pub errors: Vec<DVector<f64>>,
    pub nees: Vec<f64>,
    /// Position error norm for poses, tangent error norm otherwise.
    pub error_norms: Vec<f64>,
    /// Rotation error angle for poses and rotations, 0 otherwise.
    pub rotation_errors: Vec<f64>,
    pub average_nees: f64,
    pub envelope: Envelope,
}

impl ConsistencyReport {
    pub fn from_trace(trace: &TrajectoryTrace, level: f64) -> Result<Self> {
        let first = trace
            .entries()
            .first()
            .ok_or_else(|| contract("empty trace"))?;
        let dof = first.belief.dof();
        let n = trace.len();
        let mut out = Self {
            stamps: Vec::with_capacity(n),
            errors: Vec::with_capacity(n),
            nees: Vec::with_capacity(n),
            error_norms: Vec::with_capacity(n),
            rotation_errors: Vec::with_capacity(n),
            average_nees: 0.0,
            envelope: Envelope::new(dof, 1, level)?,
        };
        for e in trace.entries() {
            let err = e.belief.mean.ominus(&e.truth)?;
            out.nees.push(nees_of_error(&err, &e.belief.covariance));
            let (pos, rot) = pose_errors(&e.belief.mean, &e.truth, &err);
            out.error_norms.push(pos);
            out.rotation_errors.push(rot);
            out.errors.push(err);
            out.stamps.push(e.stamp);
        }
        out.average_nees = out.nees.iter().sum::<f64>() / n as f64;
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.nees.iter().chain(&self.error_norms).all(|v| v.is_finite())
    }

    /// CSV with columns `t,error_norm,nees,nees_lower,nees_upper,e0..`.
    pub fn to_csv(&self) -> String {
        let dof = self.errors.first().map(|e| e.len()).unwrap_or(0);
        let mut out = String::from("t,error_norm,nees,nees_lower,nees_upper");
        for i in 0..dof {
            let _ = write!(out, ",e{i}");
        }
        out.push('\n');
        for k in 0..self.stamps.len() {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                self.stamps[k], self.error_norms[k], self.nees[k], self.envelope.lower, self.envelope.upper
            );
            for v in self.errors[k].iter() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn pose_errors(est: &ManifoldPoint, truth: &ManifoldPoint, err: &DVector<f64>) -> (f64, f64) {
    match (est.as_group(), truth.as_group()) {
        (Some(a), Some(b)) => {
            let rot = {
                let r = a.rotation().transpose() * b.rotation();
                let rd = r.nrows();
                if rd == 2 {
                    r[(1, 0)].atan2(r[(0, 0)]).abs()
                } else {
                    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
                }
            };
            match (a.position(), b.position()) {
                (Some(pa), Some(pb)) => ((pa - pb).norm(), rot),
                _ => (err.norm(), rot),
            }
        }
        _ => (err.norm(), 0.0),
    }
}

/// Independent per-trial random stream: ChaCha8 keyed by `seed`, stream `trial`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Draws from `N(0, cov)`. Uses the Cholesky factor, or the eigenvalue square
/// root when the covariance is only semi-definite.
pub fn sample_gaussian(rng: &mut ChaCha8Rng, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = cov.nrows();
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    Ok(noise_root(cov)? * z)
}

/// A matrix `S` with `S S^T = cov`.
pub fn noise_root(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(cov);
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c.l());
    }
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.min() < -1e-10 * eig.eigenvalues.amax().max(1.0) {
        return Err(crate::error::Error::NotPositiveDefinite(
            "noise covariance has a negative eigenvalue".into(),
        ));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// Outcome of one Monte-Carlo trial.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Completed(ConsistencyReport),
    /// The estimator returned an error or non-finite values.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    /// One outcome per trial, in trial order.
    pub outcomes: Vec<TrialOutcome>,
}

impl MonteCarloResult {
    pub fn reports(&self) -> impl Iterator<Item = &ConsistencyReport> {
        self.outcomes.iter().filter_map(|o| match o {
            TrialOutcome::Completed(r) => Some(r),
            TrialOutcome::Failed(_) => None,
        })
    }

    pub fn failed_trials(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, TrialOutcome::Failed(_)))
            .count()
    }

    /// Per-step average NEES over the completed trials.
    pub fn average_nees(&self) -> Vec<f64> {
        average(self.reports().map(|r| r.nees.as_slice()))
    }

    pub fn average_error_norm(&self) -> Vec<f64> {
        average(self.reports().map(|r| r.error_norms.as_slice()))
    }

    /// Envelope for the per-step average NEES of the completed trials.
    pub fn envelope(&self, level: f64) -> Result<Envelope> {
        let r = self
            .reports()
            .next()
            .ok_or_else(|| contract("no completed trials"))?;
        Envelope::new(r.envelope.dof, self.reports().count(), level)
    }
}

fn average<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for r in rows {
        if sum.is_empty() {
            sum = vec![0.0; r.len()];
        }
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
        count += 1;
    }
    sum.iter().map(|s| s / count as f64).collect()
}

/// Runs `trials` independent trials. Each trial draws its data with
/// `simulate` from its own stream of [`trial_rng`], then runs `estimate` on
/// that data. Estimator errors and non-finite results mark the trial failed;
/// simulation errors abort the run. Simulated data is dropped after each
/// trial; call `simulate` with [`trial_rng`] again to recover it.
pub fn run_monte_carlo<D, S, E>(
    trials: usize,
    seed: u64,
    level: f64,
    simulate: S,
    estimate: E,
) -> Result<MonteCarloResult>
where
    S: Fn(&mut ChaCha8Rng) -> Result<D>,
    E: Fn(&D) -> Result<TrajectoryTrace>,
{
    if trials == 0 {
        return Err(contract("Monte-Carlo run needs at least one trial"));
    }
    let mut outcomes = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = trial_rng(seed, trial as u64);
        let d = simulate(&mut rng)?;
        let outcome = match estimate(&d).and_then(|t| ConsistencyReport::from_trace(&t, level)) {
            Ok(r) if r.is_finite() => TrialOutcome::Completed(r),
            Ok(_) => TrialOutcome::Failed("non-finite estimate".into()),
            Err(e) => TrialOutcome::Failed(e.to_string()),
        };
        if let TrialOutcome::Failed(msg) = &outcome {
            log::warn!("trial {trial} failed: {msg}");
        }
        outcomes.push(outcome);
    }
    Ok(MonteCarloResult { outcomes })
}
