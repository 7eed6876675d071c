//! Estimator selection, Monte-Carlo runs and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use navkit::batch::{
    make_measurement_term, make_prior_term, make_process_term, solve, BatchProblem, SolveOptions,
};
use navkit::evaluation::{
    run_monte_carlo, svg_line_plot, ConsistencyReport, Envelope, MonteCarloResult, Series,
    TrajectoryTrace,
};
use navkit::filters::{
    imm_estimate, imm_step, Ekf, Filter, ImmBelief, InvariantEkf, IteratedEkf, SigmaPointFilter,
    SigmaPointScheme,
};
use navkit::models::{BodyFrameVelocity, InvariantForm, ProcessModel, StampedInput};
use navkit::preintegration::Increment;
use navkit::{Error, GaussianBelief, GroupKind, ManifoldPoint, Result};
use serde::{Deserialize, Serialize};

use crate::scenario::{simulate, stack_measurements, ScenarioConfig, TrialData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Ekf,
    IteratedEkf,
    InvariantLeft,
    InvariantRight,
    Ukf,
    Ckf,
    Ghkf,
    Batch,
    Imm,
}

const FILTERS: [(EstimatorKind, &str, &str); 9] = [
    (EstimatorKind::Ekf, "ekf", "extended Kalman filter"),
    (EstimatorKind::IteratedEkf, "iterekf", "iterated EKF (Gauss-Newton on each update)"),
    (
        EstimatorKind::InvariantLeft,
        "invariant-left",
        "invariant EKF for left-invariant measurements X b (right-side states)",
    ),
    (
        EstimatorKind::InvariantRight,
        "invariant-right",
        "invariant EKF for right-invariant measurements X^-1 b (left-side states)",
    ),
    (EstimatorKind::Ukf, "ukf", "unscented Kalman filter"),
    (EstimatorKind::Ckf, "ckf", "spherical cubature Kalman filter"),
    (
        EstimatorKind::Ghkf,
        "ghkf",
        "Gauss-Hermite Kalman filter, predicting with preintegrated increments",
    ),
    (
        EstimatorKind::Batch,
        "batch",
        "batch MAP smoother over all measurement epochs",
    ),
    (EstimatorKind::Imm, "imm", "interacting multiple model EKF over input-noise levels"),
];

impl EstimatorKind {
    pub fn all() -> impl Iterator<Item = EstimatorKind> {
        FILTERS.iter().map(|f| f.0)
    }

    pub fn name(self) -> &'static str {
        FILTERS.iter().find(|f| f.0 == self).map(|f| f.1).unwrap()
    }

    pub fn parse(name: &str) -> Result<Self> {
        FILTERS.iter().find(|f| f.1 == name).map(|f| f.0).ok_or_else(|| {
            let names: Vec<&str> = FILTERS.iter().map(|f| f.1).collect();
            Error::Configuration(format!(
                "unknown filter '{name}'; valid filters: {}",
                names.join(", ")
            ))
        })
    }
}

/// One line per estimator: name and description, in a fixed order.
pub fn list_filters() -> String {
    let mut out = String::new();
    for (_, name, desc) in FILTERS {
        let _ = writeln!(out, "{name:<16} {desc}");
    }
    out
}

/// Rejects invariant filters whose measurement form does not match the
/// scenario's perturbation side.
pub fn check_pairing(cfg: &ScenarioConfig, kind: EstimatorKind) -> Result<()> {
    let form = match kind {
        EstimatorKind::InvariantLeft => InvariantForm::Left,
        EstimatorKind::InvariantRight => InvariantForm::Right,
        _ => return Ok(()),
    };
    let rule = "left-invariant measurements X b pair with right perturbations and \
                right-invariant measurements X^-1 b with left perturbations";
    if cfg.side != form.compatible_side() {
        return Err(Error::Configuration(format!(
            "filter {} needs a {:?} perturbation side but the scenario uses {:?}; {rule}",
            kind.name(),
            form.compatible_side(),
            cfg.side
        )));
    }
    if let Some(f) = cfg.measurement.invariant_form() {
        if f != form {
            return Err(Error::Configuration(format!(
                "filter {} cannot process {:?}-invariant measurements; {rule}",
                kind.name(),
                f
            )));
        }
    }
    Ok(())
}

/// Body-frame velocity model with its input noise scaled by a constant.
#[derive(Debug, Clone, Copy)]
struct ScaledInputNoise {
    scale: f64,
}

impl ProcessModel for ScaledInputNoise {
    fn evaluate(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<ManifoldPoint> {
        BodyFrameVelocity.evaluate(x, u, dt)
    }

    fn jacobian(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<DMatrix<f64>> {
        BodyFrameVelocity.jacobian(x, u, dt)
    }

    fn input_jacobian(
        &self,
        x: &ManifoldPoint,
        u: &StampedInput,
        dt: f64,
    ) -> Option<Result<DMatrix<f64>>> {
        BodyFrameVelocity.input_jacobian(x, u, dt)
    }

    fn covariance(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<DMatrix<f64>> {
        Ok(BodyFrameVelocity.covariance(x, u, dt)? * self.scale)
    }
}

/// Runs the chosen estimator on one trial and pairs its beliefs with the
/// truth at t = 0 and at every measurement epoch.
pub fn estimate(cfg: &ScenarioConfig, kind: EstimatorKind, data: &TrialData) -> Result<TrajectoryTrace> {
    check_pairing(cfg, kind)?;
    let e = &cfg.estimator;
    match kind {
        EstimatorKind::Ekf => recursive(cfg, data, &Ekf::default(), false),
        EstimatorKind::IteratedEkf => recursive(
            cfg,
            data,
            &IteratedEkf {
                max_iters: e.iterated_max_iters,
                tol: e.iterated_tol,
            },
            false,
        ),
        EstimatorKind::InvariantLeft | EstimatorKind::InvariantRight => {
            recursive(cfg, data, &InvariantEkf, false)
        }
        EstimatorKind::Ukf => {
            let scheme = SigmaPointScheme::Unscented {
                kappa: e.unscented_kappa,
            };
            recursive(cfg, data, &SigmaPointFilter { scheme }, false)
        }
        EstimatorKind::Ckf => {
            let scheme = SigmaPointScheme::SphericalCubature;
            recursive(cfg, data, &SigmaPointFilter { scheme }, false)
        }
        EstimatorKind::Ghkf => {
            let scheme = SigmaPointScheme::GaussHermite {
                order: e.gauss_hermite_order,
            };
            recursive(cfg, data, &SigmaPointFilter { scheme }, true)
        }
        EstimatorKind::Batch => batch(cfg, data),
        EstimatorKind::Imm => imm(cfg, data),
    }
}

fn epoch_increment(cfg: &ScenarioConfig, data: &TrialData, epoch: usize) -> Result<Increment> {
    let per = cfg.steps_per_epoch();
    let dt = 1.0 / cfg.input_rate_hz;
    let mut inc = Increment::group(GroupKind::SE3, cfg.stamp(epoch * per));
    for k in epoch * per..(epoch + 1) * per {
        inc = inc.accumulate(&data.input(cfg, k)?, dt)?;
    }
    Ok(inc)
}

fn recursive(cfg: &ScenarioConfig, data: &TrialData, filter: &dyn Filter, preintegrate: bool) -> Result<TrajectoryTrace> {
    let dt = 1.0 / cfg.input_rate_hz;
    let per = cfg.steps_per_epoch();
    let mut trace = TrajectoryTrace::new();
    let mut belief = data.initial.clone();
    trace.push(0.0, data.truth[0].clone(), belief.clone())?;
    for (j, epoch) in data.measurements.iter().enumerate() {
        if preintegrate {
            let inc = epoch_increment(cfg, data, j)?;
            let (a, b) = inc.span();
            let u = StampedInput::new(DVector::zeros(6), a);
            belief = filter.predict(&belief, &inc.as_process_model(), &u, b - a)?;
        } else {
            for k in j * per..(j + 1) * per {
                belief = filter.predict(&belief, &BodyFrameVelocity, &data.input(cfg, k)?, dt)?;
            }
        }
        for m in epoch {
            belief = filter.correct(&belief, m)?;
        }
        trace.push(cfg.stamp((j + 1) * per), data.truth[j + 1].clone(), belief.clone())?;
    }
    Ok(trace)
}

fn imm(cfg: &ScenarioConfig, data: &TrialData) -> Result<TrajectoryTrace> {
    let e = &cfg.estimator;
    let n = e.imm_noise_scales.len();
    let models: Vec<ScaledInputNoise> = e
        .imm_noise_scales
        .iter()
        .map(|&scale| ScaledInputNoise { scale })
        .collect();
    let refs: Vec<&dyn ProcessModel> = models.iter().map(|m| m as &dyn ProcessModel).collect();
    let transition = if n == 1 {
        DMatrix::identity(1, 1)
    } else {
        let p = e.imm_switch_probability;
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - p } else { p / (n - 1) as f64 })
    };
    let mut belief = ImmBelief::new(
        vec![data.initial.clone(); n],
        DVector::from_element(n, 1.0 / n as f64),
        transition,
    )?;
    let dt = 1.0 / cfg.input_rate_hz;
    let per = cfg.steps_per_epoch();
    let mut trace = TrajectoryTrace::new();
    trace.push(0.0, data.truth[0].clone(), imm_estimate(&belief)?)?;
    for (j, epoch) in data.measurements.iter().enumerate() {
        let meas = stack_measurements(epoch)?;
        for k in j * per..(j + 1) * per {
            let m = (k + 1 == (j + 1) * per).then_some(&meas);
            belief = imm_step(&belief, &refs, &data.input(cfg, k)?, m, dt)?.belief;
        }
        trace.push(cfg.stamp((j + 1) * per), data.truth[j + 1].clone(), imm_estimate(&belief)?)?;
    }
    Ok(trace)
}

fn batch(cfg: &ScenarioConfig, data: &TrialData) -> Result<TrajectoryTrace> {
    let id = |j: usize| format!("x{j}");
    let x0 = data.initial.mean.clone().with_id(id(0));
    let mut terms = vec![make_prior_term(&GaussianBelief::new(x0.clone(), data.initial.covariance.clone())?)?];
    let mut vars = vec![x0];
    let per = cfg.steps_per_epoch();
    for (j, epoch) in data.measurements.iter().enumerate() {
        let inc = epoch_increment(cfg, data, j)?;
        let (a, b) = inc.span();
        let guess = inc
            .apply(vars.last().unwrap())?
            .with_stamp(cfg.stamp((j + 1) * per))
            .with_id(id(j + 1));
        vars.push(guess);
        let model: Arc<dyn ProcessModel> = Arc::new(inc.as_process_model());
        terms.push(make_process_term(
            model,
            StampedInput::new(DVector::zeros(6), a),
            b - a,
            id(j),
            id(j + 1),
        ));
        for m in epoch {
            terms.push(make_measurement_term(m.clone().with_target(id(j + 1)))?);
        }
    }
    let problem = BatchProblem::new(vars, terms)?;
    let mut opts = if cfg.estimator.batch_levenberg_marquardt {
        SolveOptions::levenberg_marquardt()
    } else {
        SolveOptions::default()
    };
    opts.max_iters = cfg.estimator.batch_max_iters;
    opts.compute_covariance = true;
    let sol = solve(&problem, &opts)?;
    log::debug!(
        "batch: {} iterations, cost {} -> {}, {:?}",
        sol.report.iterations,
        sol.report.initial_cost,
        sol.report.final_cost,
        sol.report.reason
    );
    let marginals = sol
        .marginals
        .ok_or_else(|| Error::Numerical("batch solver returned no marginals".into()))?;
    let mut trace = TrajectoryTrace::new();
    for (j, (x, p)) in sol.variables.into_iter().zip(marginals).enumerate() {
        trace.push(cfg.stamp(j * per), data.truth[j].clone(), GaussianBelief::new(x, p)?)?;
    }
    Ok(trace)
}

/// Result of a Monte-Carlo run of one estimator.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub filter: EstimatorKind,
    pub seed: u64,
    pub trials: usize,
    pub result: MonteCarloResult,
    pub wall_time_s: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub filter: String,
    pub seed: u64,
    pub trials: usize,
    pub avg_nees: f64,
    pub nees_lower: f64,
    pub nees_upper: f64,
    pub rmse_position: f64,
    pub rmse_rotation: f64,
    pub wall_time_s: f64,
    pub failed_trials: usize,
}

/// Runs `trials` simulated trials of `cfg` through `kind`.
pub fn run(cfg: &ScenarioConfig, kind: EstimatorKind, seed: u64, trials: usize) -> Result<RunOutput> {
    cfg.validate()?;
    check_pairing(cfg, kind)?;
    let start = Instant::now();
    let result = run_monte_carlo(
        trials,
        seed,
        cfg.confidence_level,
        |rng| simulate(cfg, rng),
        |data| estimate(cfg, kind, data),
    )?;
    Ok(RunOutput {
        filter: kind,
        seed,
        trials,
        result,
        wall_time_s: start.elapsed().as_secs_f64(),
        level: cfg.confidence_level,
    })
}

impl RunOutput {
    pub fn all_failed(&self) -> bool {
        self.result.failed_trials() == self.trials
    }

    fn reports(&self) -> Vec<&ConsistencyReport> {
        self.result.reports().collect()
    }

    /// Envelope of the per-step NEES averaged over the completed trials.
    pub fn envelope(&self) -> Option<Envelope> {
        self.result.envelope(self.level).ok()
    }

    pub fn stamps(&self) -> Vec<f64> {
        self.reports().first().map(|r| r.stamps.clone()).unwrap_or_default()
    }

    /// Per-step NEES averaged over the completed trials.
    pub fn average_nees(&self) -> Vec<f64> {
        self.result.average_nees()
    }

    pub fn average_error_norm(&self) -> Vec<f64> {
        self.result.average_error_norm()
    }

    pub fn summary(&self) -> Summary {
        let reports = self.reports();
        let nees = self.average_nees();
        let rms = |f: &dyn Fn(&ConsistencyReport) -> &[f64]| {
            let (mut sum, mut n) = (0.0, 0usize);
            for r in &reports {
                for v in f(r) {
                    sum += v * v;
                    n += 1;
                }
            }
            (sum / n as f64).sqrt()
        };
        let env = self.envelope();
        Summary {
            filter: self.filter.name().to_string(),
            seed: self.seed,
            trials: self.trials,
            avg_nees: nees.iter().sum::<f64>() / nees.len() as f64,
            nees_lower: env.map_or(f64::NAN, |e| e.lower),
            nees_upper: env.map_or(f64::NAN, |e| e.upper),
            rmse_position: rms(&|r| &r.error_norms),
            rmse_rotation: rms(&|r| &r.rotation_errors),
            wall_time_s: self.wall_time_s,
            failed_trials: self.result.failed_trials(),
        }
    }

    /// One row per step with errors, error norm and NEES averaged over the
    /// completed trials. Tangent errors are reordered to translation first.
    pub fn trace_csv(&self) -> String {
        let reports = self.reports();
        let mut out = String::from("t,err_x,err_y,err_z,err_rx,err_ry,err_rz,error_norm,nees\n");
        let Some(first) = reports.first() else {
            return out;
        };
        let n = reports.len() as f64;
        let nees = self.average_nees();
        let norms = self.average_error_norm();
        for (k, t) in first.stamps.iter().enumerate() {
            let mut e = DVector::<f64>::zeros(first.errors[k].len());
            for r in &reports {
                e += &r.errors[k];
            }
            e /= n;
            let _ = write!(out, "{t}");
            for i in [3, 4, 5, 0, 1, 2] {
                let _ = write!(out, ",{}", e[i]);
            }
            let _ = writeln!(out, ",{},{}", norms[k], nees[k]);
        }
        out
    }

    pub fn error_norm_svg(&self) -> String {
        let s = Series::new(self.filter.name(), self.stamps(), self.average_error_norm(), "#1f77b4");
        svg_line_plot("Position error norm", "t [s]", "error norm [m]", &[s])
    }

    pub fn nees_svg(&self) -> String {
        let t = self.stamps();
        let mut series = vec![Series::new(self.filter.name(), t.clone(), self.average_nees(), "#1f77b4")];
        if let Some(env) = self.envelope() {
            let pct = (env.level * 100.0).round();
            series.push(Series::new(format!("{pct}% lower"), t.clone(), vec![env.lower; t.len()], "#d62728").dashed());
            series.push(Series::new(format!("{pct}% upper"), t.clone(), vec![env.upper; t.len()], "#d62728").dashed());
        }
        svg_line_plot("Average NEES", "t [s]", "NEES", &series)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Svg,
    Both,
}

/// Writes the report files of `out` into `dir` and returns their paths.
/// `summary.json` is always written; trace and plots only when some trial
/// completed.
pub fn write_outputs(out: &RunOutput, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        files.push(path);
        Ok(())
    };
    if !out.all_failed() {
        if format != OutputFormat::Svg {
            put(format!("trace_{}.csv", out.filter.name()), out.trace_csv())?;
        }
        if format != OutputFormat::Csv {
            put("error_norm.svg".into(), out.error_norm_svg())?;
            put("nees.svg".into(), out.nees_svg())?;
        }
    }
    let summary = serde_json::to_string_pretty(&out.summary()).expect("summary serializes");
    put("summary.json".into(), summary + "\n")?;
    Ok(files)
}
