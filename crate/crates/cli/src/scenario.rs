//! Scenario configuration and per-trial simulation.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use navkit::evaluation::{sample_gaussian, trial_rng, ChaCha8Rng};
use navkit::models::{
    BodyFrameVelocity, InvariantForm, InvariantPointMeasurement, MeasurementModel, ProcessModel,
    RangeToAnchor, StampedInput, StampedMeasurement,
};
use navkit::{Error, GaussianBelief, GroupElement, GroupKind, ManifoldPoint, Result, Side, TangentVector};
use serde::{Deserialize, Serialize};

/// Body-frame velocity profile `u(t) = [omega; v]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum InputProfile {
    Constant {
        angular_rate_radps: [f64; 3],
        velocity_mps: [f64; 3],
    },
    /// Each of the six components is `bias + amplitude * sin(2 pi f t + phase)`.
    Sinusoidal {
        bias: [f64; 6],
        amplitude: [f64; 6],
        frequency_hz: [f64; 6],
        phase_rad: [f64; 6],
    },
}

impl InputProfile {
    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            InputProfile::Constant {
                angular_rate_radps: w,
                velocity_mps: v,
            } => DVector::from_vec(vec![w[0], w[1], w[2], v[0], v[1], v[2]]),
            InputProfile::Sinusoidal {
                bias,
                amplitude,
                frequency_hz,
                phase_rad,
            } => DVector::from_fn(6, |i, _| {
                bias[i]
                    + amplitude[i]
                        * (2.0 * std::f64::consts::PI * frequency_hz[i] * t + phase_rad[i]).sin()
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    /// Stacked ranges to all anchors.
    Range,
    /// Anchor positions seen from the body, `X^-1 a`, one measurement per anchor.
    AnchorRelativePosition,
    /// Body position in the world, `X 0`.
    Position,
}

impl MeasurementKind {
    pub fn invariant_form(self) -> Option<InvariantForm> {
        match self {
            MeasurementKind::Range => None,
            MeasurementKind::AnchorRelativePosition => Some(InvariantForm::Right),
            MeasurementKind::Position => Some(InvariantForm::Left),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialBelief {
    pub rotation_vector_rad: [f64; 3],
    pub position_m: [f64; 3],
    pub rotation_std_rad: [f64; 3],
    pub position_std_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    pub unscented_kappa: f64,
    pub gauss_hermite_order: usize,
    pub iterated_max_iters: usize,
    pub iterated_tol: f64,
    /// Input-noise multipliers of the IMM modes.
    pub imm_noise_scales: Vec<f64>,
    pub imm_switch_probability: f64,
    pub batch_levenberg_marquardt: bool,
    pub batch_max_iters: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            unscented_kappa: 2.0,
            gauss_hermite_order: 3,
            iterated_max_iters: 10,
            iterated_tol: 1e-9,
            imm_noise_scales: vec![1.0, 10.0],
            imm_switch_probability: 0.02,
            batch_levenberg_marquardt: false,
            batch_max_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub duration_s: f64,
    pub input_rate_hz: f64,
    pub measurement_rate_hz: f64,
    pub side: Side,
    pub anchors_m: Vec<[f64; 3]>,
    pub input_profile: InputProfile,
    pub angular_rate_noise_std_radps: [f64; 3],
    pub velocity_noise_std_mps: [f64; 3],
    #[serde(default = "default_measurement")]
    pub measurement: MeasurementKind,
    /// Range noise per anchor.
    #[serde(default)]
    pub range_noise_std_m: Vec<f64>,
    /// Noise of each position component for the vector-valued measurements.
    #[serde(default = "default_position_noise")]
    pub position_noise_std_m: f64,
    pub initial: InitialBelief,
    /// When false the simulation draws no noise at all; the estimators still
    /// use the configured covariances.
    #[serde(default = "default_true")]
    pub inject_noise: bool,
    #[serde(default = "default_level")]
    pub confidence_level: f64,
    #[serde(default)]
    pub estimator: EstimatorSettings,
}

fn default_measurement() -> MeasurementKind {
    MeasurementKind::Range
}

fn default_position_noise() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

fn default_level() -> f64 {
    0.95
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Configuration(msg.into())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| config_error(format!("invalid scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.duration_s) || !positive(self.input_rate_hz) || !positive(self.measurement_rate_hz) {
            return Err(config_error("duration and rates must be positive"));
        }
        if self.measurement_rate_hz > self.input_rate_hz {
            return Err(config_error("measurement rate exceeds input rate"));
        }
        let ratio = self.input_rate_hz / self.measurement_rate_hz;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(config_error("input rate must be an integer multiple of the measurement rate"));
        }
        if self.anchors_m.is_empty() {
            return Err(config_error("at least one anchor is required"));
        }
        if self.measurement == MeasurementKind::Range && self.range_noise_std_m.len() != self.anchors_m.len() {
            return Err(config_error("range_noise_std_m needs one entry per anchor"));
        }
        let stds = self
            .angular_rate_noise_std_radps
            .iter()
            .chain(&self.velocity_noise_std_mps)
            .chain(&self.initial.rotation_std_rad)
            .chain(&self.initial.position_std_m);
        for s in stds {
            if !(s.is_finite() && *s >= 0.0) {
                return Err(config_error("standard deviations must be finite and non-negative"));
            }
        }
        if self.initial.rotation_std_rad.iter().chain(&self.initial.position_std_m).any(|s| *s == 0.0) {
            return Err(config_error("initial standard deviations must be positive"));
        }
        let meas_std: Vec<f64> = match self.measurement {
            MeasurementKind::Range => self.range_noise_std_m.clone(),
            _ => vec![self.position_noise_std_m],
        };
        if meas_std.iter().any(|s| !positive(*s)) {
            return Err(config_error("measurement noise must be positive"));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(config_error("confidence_level must lie in (0, 1)"));
        }
        let e = &self.estimator;
        if e.imm_noise_scales.is_empty() || e.imm_noise_scales.iter().any(|s| !positive(*s)) {
            return Err(config_error("imm_noise_scales must be positive and non-empty"));
        }
        if !(0.0..1.0).contains(&e.imm_switch_probability) {
            return Err(config_error("imm_switch_probability must lie in [0, 1)"));
        }
        if e.gauss_hermite_order == 0 || e.iterated_max_iters == 0 || e.batch_max_iters == 0 {
            return Err(config_error("estimator orders and iteration limits must be positive"));
        }
        Ok(())
    }

    pub fn input_steps(&self) -> usize {
        (self.duration_s * self.input_rate_hz).round() as usize
    }

    /// Input steps between two measurement epochs.
    pub fn steps_per_epoch(&self) -> usize {
        (self.input_rate_hz / self.measurement_rate_hz).round() as usize
    }

    pub fn epochs(&self) -> usize {
        self.input_steps() / self.steps_per_epoch()
    }

    pub fn stamp(&self, step: usize) -> f64 {
        step as f64 / self.input_rate_hz
    }

    pub fn input_covariance(&self) -> DMatrix<f64> {
        let s = self
            .angular_rate_noise_std_radps
            .iter()
            .chain(&self.velocity_noise_std_mps)
            .map(|v| v * v);
        DMatrix::from_diagonal(&DVector::from_iterator(6, s))
    }

    pub fn initial_covariance(&self) -> DMatrix<f64> {
        let s = self
            .initial
            .rotation_std_rad
            .iter()
            .chain(&self.initial.position_std_m)
            .map(|v| v * v);
        DMatrix::from_diagonal(&DVector::from_iterator(6, s))
    }

    pub fn initial_pose(&self) -> Result<ManifoldPoint> {
        let r = self.initial.rotation_vector_rad;
        let p = self.initial.position_m;
        let xi = TangentVector::from_slice(GroupKind::SO3, &r)?;
        let rot = xi.exp();
        let el = GroupElement::from_rotation_translation(
            GroupKind::SE3,
            &rot.matrix().clone(),
            &DVector::from_column_slice(&p),
        )?;
        Ok(ManifoldPoint::group(el, self.side).with_stamp(0.0))
    }

    /// Measurement models of one epoch, in a fixed order.
    pub fn measurement_models(&self) -> Result<Vec<Arc<dyn MeasurementModel>>> {
        let r = self.position_noise_std_m.powi(2);
        Ok(match self.measurement {
            MeasurementKind::Range => {
                let parts = self
                    .anchors_m
                    .iter()
                    .zip(&self.range_noise_std_m)
                    .map(|(a, s)| Arc::new(RangeToAnchor::new(*a, s * s)) as Arc<dyn MeasurementModel>)
                    .collect();
                vec![Arc::new(StackedMeasurement { parts }) as Arc<dyn MeasurementModel>]
            }
            MeasurementKind::AnchorRelativePosition => self
                .anchors_m
                .iter()
                .map(|a| {
                    InvariantPointMeasurement::new(
                        DVector::from_column_slice(a),
                        InvariantForm::Right,
                        DMatrix::identity(3, 3) * r,
                    )
                    .map(|m| Arc::new(m) as Arc<dyn MeasurementModel>)
                })
                .collect::<Result<_>>()?,
            MeasurementKind::Position => vec![Arc::new(InvariantPointMeasurement::new(
                DVector::zeros(3),
                InvariantForm::Left,
                DMatrix::identity(3, 3) * r,
            )?) as Arc<dyn MeasurementModel>],
        })
    }
}

/// Several measurement models of the same state stacked into one, with a
/// block-diagonal covariance.
#[derive(Debug, Clone)]
pub struct StackedMeasurement {
    pub parts: Vec<Arc<dyn MeasurementModel>>,
}

impl MeasurementModel for StackedMeasurement {
    fn evaluate(&self, x: &ManifoldPoint) -> Result<DVector<f64>> {
        let mut out = Vec::with_capacity(self.output_dim());
        for m in &self.parts {
            out.extend(m.evaluate(x)?.iter());
        }
        Ok(DVector::from_vec(out))
    }

    fn output_dim(&self) -> usize {
        self.parts.iter().map(|m| m.output_dim()).sum()
    }

    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.output_dim(), x.dof());
        let mut row = 0;
        for m in &self.parts {
            let j = m.jacobian(x)?;
            out.rows_mut(row, j.nrows()).copy_from(&j);
            row += j.nrows();
        }
        Ok(out)
    }

    fn covariance(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        let n = self.output_dim();
        let mut out = DMatrix::zeros(n, n);
        let mut at = 0;
        for m in &self.parts {
            let r = m.covariance(x)?;
            out.view_mut((at, at), (r.nrows(), r.nrows())).copy_from(&r);
            at += r.nrows();
        }
        Ok(out)
    }
}

/// Stacks the measurements of one epoch into a single measurement.
pub fn stack_measurements(epoch: &[StampedMeasurement]) -> Result<StampedMeasurement> {
    let first = epoch
        .first()
        .ok_or_else(|| Error::Contract("empty measurement epoch".into()))?;
    if epoch.len() == 1 {
        return Ok(first.clone());
    }
    let y: Vec<f64> = epoch.iter().flat_map(|m| m.y.iter().copied()).collect();
    let model = StackedMeasurement {
        parts: epoch.iter().map(|m| m.model.clone()).collect(),
    };
    StampedMeasurement::new(DVector::from_vec(y), first.stamp, Arc::new(model))
}

/// Everything one trial feeds to an estimator, plus the truth it is scored
/// against. Inputs are stored without their covariance.
#[derive(Debug, Clone)]
pub struct TrialData {
    /// Initial belief handed to the estimator.
    pub initial: GaussianBelief,
    /// Noisy inputs, one per input step.
    pub inputs: Vec<DVector<f64>>,
    /// Truth at t = 0 and at every measurement epoch.
    pub truth: Vec<ManifoldPoint>,
    /// Measurements of every epoch, in epoch order.
    pub measurements: Vec<Vec<StampedMeasurement>>,
}

impl TrialData {
    pub fn input(&self, cfg: &ScenarioConfig, step: usize) -> Result<StampedInput> {
        StampedInput::new(self.inputs[step].clone(), cfg.stamp(step)).with_covariance(cfg.input_covariance())
    }
}

/// Simulates one trial. Truth is dead-reckoned from the noiseless profile;
/// then the initial error, input noise and measurement noise are drawn in
/// that order from `rng`.
pub fn simulate(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<TrialData> {
    let model = BodyFrameVelocity;
    let dt = 1.0 / cfg.input_rate_hz;
    let steps = cfg.input_steps();
    let per_epoch = cfg.steps_per_epoch();
    let noisy = cfg.inject_noise;

    let p0 = cfg.initial_covariance();
    let x0 = cfg.initial_pose()?;
    let delta = if noisy {
        sample_gaussian(rng, &p0)?
    } else {
        DVector::zeros(6)
    };
    let initial = GaussianBelief::new(x0.oplus(&delta)?.with_stamp(0.0), p0)?;

    let qu = cfg.input_covariance();
    let models = cfg.measurement_models()?;
    let mut truth = vec![x0.clone()];
    let mut inputs = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(cfg.epochs());
    let mut x = x0;
    for k in 0..steps {
        let clean = StampedInput::new(cfg.input_profile.at(cfg.stamp(k)), cfg.stamp(k));
        x = model.evaluate(&x, &clean, dt)?.with_stamp(cfg.stamp(k + 1));
        let u = if noisy {
            &clean.u + sample_gaussian(rng, &qu)?
        } else {
            clean.u.clone()
        };
        inputs.push(u);
        if (k + 1) % per_epoch == 0 {
            let t = cfg.stamp(k + 1);
            let mut epoch = Vec::with_capacity(models.len());
            for m in &models {
                let mut y = m.evaluate(&x)?;
                if noisy {
                    y += sample_gaussian(rng, &m.covariance(&x)?)?;
                }
                epoch.push(StampedMeasurement::new(y, t, m.clone())?);
            }
            measurements.push(epoch);
            truth.push(x.clone());
        }
    }
    Ok(TrialData {
        initial,
        inputs,
        truth,
        measurements,
    })
}

/// Simulated data of trial `trial` for `seed`, as the Monte-Carlo run sees it.
pub fn simulate_trial(cfg: &ScenarioConfig, seed: u64, trial: u64) -> Result<TrialData> {
    simulate(cfg, &mut trial_rng(seed, trial))
}

/// Scale of the initial position uncertainty: root of the trace of the
/// initial position covariance.
pub fn initial_position_bound(cfg: &ScenarioConfig) -> f64 {
    cfg.initial.position_std_m.iter().map(|s| s * s).sum::<f64>().sqrt()
}
