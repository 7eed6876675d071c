//! Preintegration of high-rate inputs into relative motion increments.
//!
//! Each increment carries the accumulated motion, its noise covariance
//! propagated to first order, and the time span it covers. Increments can be
//! applied to a state directly or wrapped as a [`ProcessModel`] so filters
//! and the batch solver consume them like any other model.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{contract, Result};
use crate::lie::{self, GroupElement, GroupKind, Side, TangentVector};
use crate::models::{imu_increment_matrices, LinearProcess, ProcessModel, StampedInput};
use crate::numdiff::{self, DiffScheme};
use crate::state::{symmetrize, ManifoldPoint};

const STAMP_SLACK: f64 = 1e-9;

/// `x_j = F_ij x_i + dx_ij` for a linear process.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearIncrement {
    pub f: DMatrix<f64>,
    pub dx: DVector<f64>,
    pub q: DMatrix<f64>,
    pub span: (f64, f64),
    model: LinearProcess,
}

/// `X_j = X_i dX_ij` for body-frame velocity inputs. `q` is the covariance of
/// a right perturbation of `dX_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupIncrement {
    pub dx: GroupElement,
    pub q: DMatrix<f64>,
    pub span: (f64, f64),
    /// Nominal inputs and step lengths, kept for bias correction.
    pub inputs: Vec<(DVector<f64>, f64)>,
}

/// `T_j = dG_ij T_i dU_ij` for IMU inputs on SE2(3). `q` is the covariance of
/// a right perturbation of `dU_ij`, which is a right perturbation of `T_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuIncrement {
    pub dg: DMatrix<f64>,
    pub du: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub span: (f64, f64),
    pub gravity: Vector3<f64>,
    pub inputs: Vec<(DVector<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Increment {
    Linear(LinearIncrement),
    Group(GroupIncrement),
    Imu(ImuIncrement),
}

fn next_span(span: (f64, f64), u: &StampedInput, dt: f64) -> Result<(f64, f64)> {
    if !(dt > 0.0) {
        return Err(contract(format!("accumulate needs dt > 0, got {dt}")));
    }
    if u.stamp < span.1 - STAMP_SLACK {
        return Err(contract(format!(
            "input stamp {} precedes the increment end {}",
            u.stamp, span.1
        )));
    }
    Ok((span.0, u.stamp + dt))
}

fn input_cov(u: &StampedInput) -> DMatrix<f64> {
    u.covariance
        .clone()
        .unwrap_or_else(|| DMatrix::zeros(u.dim(), u.dim()))
}

fn check_compose(a: (f64, f64), b: (f64, f64)) -> Result<()> {
    if (b.0 - a.1).abs() > STAMP_SLACK {
        return Err(contract("increments to compose must be contiguous"));
    }
    Ok(())
}

impl Increment {
    pub fn linear(model: LinearProcess, t0: f64) -> Self {
        let n = model.state_dim();
        Increment::Linear(LinearIncrement {
            f: DMatrix::identity(n, n),
            dx: DVector::zeros(n),
            q: DMatrix::zeros(n, n),
            span: (t0, t0),
            model,
        })
    }

    pub fn group(kind: GroupKind, t0: f64) -> Self {
        Increment::Group(GroupIncrement {
            dx: GroupElement::identity(kind),
            q: DMatrix::zeros(kind.dof(), kind.dof()),
            span: (t0, t0),
            inputs: Vec::new(),
        })
    }

    pub fn imu(gravity: Vector3<f64>, t0: f64) -> Self {
        Increment::Imu(ImuIncrement {
            dg: DMatrix::identity(5, 5),
            du: DMatrix::identity(5, 5),
            q: DMatrix::zeros(9, 9),
            span: (t0, t0),
            gravity,
            inputs: Vec::new(),
        })
    }

    pub fn span(&self) -> (f64, f64) {
        match self {
            Increment::Linear(i) => i.span,
            Increment::Group(i) => i.span,
            Increment::Imu(i) => i.span,
        }
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        match self {
            Increment::Linear(i) => &i.q,
            Increment::Group(i) => &i.q,
            Increment::Imu(i) => &i.q,
        }
    }

    /// Folds one input into the increment: `Q <- A Q A^T + B Q^u B^T`.
    pub fn accumulate(&self, u: &StampedInput, dt: f64) -> Result<Self> {
        match self {
            Increment::Linear(inc) => {
                let span = next_span(inc.span, u, dt)?;
                let x = ManifoldPoint::vector(inc.dx.clone());
                let q_step = inc.model.covariance(&x, u, dt)?;
                let f = &inc.model.f;
                let dx = inc.model.evaluate(&x, u, dt)?.as_vector().unwrap().clone();
                Ok(Increment::Linear(LinearIncrement {
                    f: f * &inc.f,
                    dx,
                    q: symmetrize(&(f * &inc.q * f.transpose() + q_step)),
                    span,
                    model: inc.model.clone(),
                }))
            }
            Increment::Group(inc) => {
                let span = next_span(inc.span, u, dt)?;
                let kind = inc.dx.kind();
                let xi = TangentVector::new(kind, &u.u * dt)?;
                let step = xi.exp();
                let a = step.inverse().adjoint();
                let b = lie::group_jacobian(&xi, Side::Right) * dt;
                let q = &a * &inc.q * a.transpose() + &b * input_cov(u) * b.transpose();
                let mut inputs = inc.inputs.clone();
                inputs.push((u.u.clone(), dt));
                Ok(Increment::Group(GroupIncrement {
                    dx: inc.dx.compose(&step)?,
                    q: symmetrize(&q),
                    span,
                    inputs,
                }))
            }
            Increment::Imu(inc) => {
                let span = next_span(inc.span, u, dt)?;
                if u.dim() != 6 {
                    return Err(contract("IMU input is [gyro(3); accel(3)]"));
                }
                let split = |v: &DVector<f64>| {
                    (Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
                };
                let (gyro, accel) = split(&u.u);
                let (g, um) = imu_increment_matrices(&gyro, &accel, &inc.gravity, dt);
                let um_inv = um.clone().try_inverse().ok_or_else(|| contract("singular IMU step"))?;
                let a = lie::conjugation_matrix(GroupKind::SE23, &um_inv)?;
                let gravity = inc.gravity;
                let b = numdiff::jacobian_vector(
                    |w: &DVector<f64>| {
                        let (gy, ac) = split(&(&u.u + w));
                        let (_, uw) = imu_increment_matrices(&gy, &ac, &gravity, dt);
                        let rel = GroupElement::from_matrix(GroupKind::SE23, &um_inv * uw)
                            .expect("5x5 matrix");
                        rel.log().coords
                    },
                    &DVector::zeros(6),
                    DiffScheme::central(),
                )?;
                let q = &a * &inc.q * a.transpose() + &b * input_cov(u) * b.transpose();
                let mut inputs = inc.inputs.clone();
                inputs.push((u.u.clone(), dt));
                Ok(Increment::Imu(ImuIncrement {
                    dg: g * &inc.dg,
                    du: &inc.du * um,
                    q: symmetrize(&q),
                    span,
                    gravity,
                    inputs,
                }))
            }
        }
    }

    /// Increment over `[i, k]` from this one over `[i, j]` and `later` over `[j, k]`.
    pub fn then(&self, later: &Self) -> Result<Self> {
        match (self, later) {
            (Increment::Linear(a), Increment::Linear(b)) => {
                check_compose(a.span, b.span)?;
                Ok(Increment::Linear(LinearIncrement {
                    f: &b.f * &a.f,
                    dx: &b.f * &a.dx + &b.dx,
                    q: symmetrize(&(&b.f * &a.q * b.f.transpose() + &b.q)),
                    span: (a.span.0, b.span.1),
                    model: a.model.clone(),
                }))
            }
            (Increment::Group(a), Increment::Group(b)) => {
                check_compose(a.span, b.span)?;
                let ad = b.dx.inverse().adjoint();
                Ok(Increment::Group(GroupIncrement {
                    dx: a.dx.compose(&b.dx)?,
                    q: symmetrize(&(&ad * &a.q * ad.transpose() + &b.q)),
                    span: (a.span.0, b.span.1),
                    inputs: a.inputs.iter().chain(&b.inputs).cloned().collect(),
                }))
            }
            (Increment::Imu(a), Increment::Imu(b)) => {
                check_compose(a.span, b.span)?;
                let inv = b.du.clone().try_inverse().ok_or_else(|| contract("singular increment"))?;
                let ad = lie::conjugation_matrix(GroupKind::SE23, &inv)?;
                Ok(Increment::Imu(ImuIncrement {
                    dg: &b.dg * &a.dg,
                    du: &a.du * &b.du,
                    q: symmetrize(&(&ad * &a.q * ad.transpose() + &b.q)),
                    span: (a.span.0, b.span.1),
                    gravity: a.gravity,
                    inputs: a.inputs.iter().chain(&b.inputs).cloned().collect(),
                }))
            }
            _ => Err(contract("cannot compose increments of different kinds")),
        }
    }

    /// Applies the increment to the state at the start of its span.
    pub fn apply(&self, x: &ManifoldPoint) -> Result<ManifoldPoint> {
        match self {
            Increment::Linear(inc) => {
                let v = x
                    .as_vector()
                    .filter(|v| v.len() == inc.f.nrows())
                    .ok_or_else(|| contract("linear increment needs a matching vector state"))?;
                x.with_vector(&inc.f * v + &inc.dx)
            }
            Increment::Group(inc) => {
                let g = group_of(x, inc.dx.kind())?;
                x.with_element(g.compose(&inc.dx)?)
            }
            Increment::Imu(inc) => {
                let g = group_of(x, GroupKind::SE23)?;
                let m = &inc.dg * g.matrix() * &inc.du;
                x.with_element(GroupElement::from_matrix(GroupKind::SE23, m)?)
            }
        }
    }

    /// The increment as a process model over its span. Inputs passed to the
    /// model are ignored.
    pub fn as_process_model(&self) -> PreintegratedModel {
        PreintegratedModel { inc: self.clone() }
    }
}

fn group_of(x: &ManifoldPoint, kind: GroupKind) -> Result<&GroupElement> {
    x.as_group()
        .filter(|g| g.kind() == kind)
        .ok_or_else(|| contract(format!("increment needs an {} state", kind.name())))
}

/// Process model whose evaluation is [`Increment::apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedModel {
    inc: Increment,
}

impl PreintegratedModel {
    pub fn increment(&self) -> &Increment {
        &self.inc
    }

    /// Length of the span, the `dt` the model stands for.
    pub fn dt(&self) -> f64 {
        let (a, b) = self.inc.span();
        b - a
    }
}

impl ProcessModel for PreintegratedModel {
    fn evaluate(&self, x: &ManifoldPoint, _u: &StampedInput, _dt: f64) -> Result<ManifoldPoint> {
        self.inc.apply(x)
    }

    fn jacobian(&self, x: &ManifoldPoint, _u: &StampedInput, _dt: f64) -> Result<DMatrix<f64>> {
        match &self.inc {
            Increment::Linear(inc) => Ok(inc.f.clone()),
            Increment::Group(inc) => Ok(match x.side() {
                Some(Side::Right) => inc.dx.inverse().adjoint(),
                _ => DMatrix::identity(x.dof(), x.dof()),
            }),
            Increment::Imu(inc) => match x.side() {
                Some(Side::Right) => lie::conjugation_matrix(
                    GroupKind::SE23,
                    &inc.du.clone().try_inverse().ok_or_else(|| contract("singular increment"))?,
                ),
                _ => lie::conjugation_matrix(GroupKind::SE23, &inc.dg),
            },
        }
    }

    fn covariance(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<DMatrix<f64>> {
        let q = self.inc.covariance();
        match (&self.inc, x.side()) {
            (Increment::Linear(_), _) | (_, Some(Side::Right)) => Ok(q.clone()),
            _ => {
                let ad = self
                    .evaluate(x, u, dt)?
                    .as_group()
                    .expect("group increment output")
                    .adjoint();
                Ok(symmetrize(&(&ad * q * ad.transpose())))
            }
        }
    }
}
