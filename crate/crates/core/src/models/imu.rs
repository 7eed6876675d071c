//! Discrete IMU kinematics on SE2(3): `T_k = G_{k-1} T_{k-1} U_{k-1}`.
//!
//! The input is `u = [gyro(3); accel(3)]` in the body frame. `U` integrates
//! the body-frame rotation, velocity and position increments over `dt`, `G`
//! adds gravity and the velocity-to-position coupling in the world frame.

use nalgebra::{DMatrix, Vector3};

use super::{ProcessModel, StampedInput};
use crate::error::{contract, Result};
use crate::lie::{self, so3, GroupKind, Side};
use crate::state::ManifoldPoint;

/// The `(G, U)` pair of one IMU step, as 5x5 matrices.
pub fn imu_increment_matrices(
    gyro: &Vector3<f64>,
    accel: &Vector3<f64>,
    gravity: &Vector3<f64>,
    dt: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let phi = gyro * dt;
    let mut u = DMatrix::identity(5, 5);
    u.fixed_view_mut::<3, 3>(0, 0).copy_from(&so3::exp(&phi));
    u.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&(so3::left_jacobian(&phi) * accel * dt));
    u.fixed_view_mut::<3, 1>(0, 4)
        .copy_from(&(so3::double_integral(&phi) * accel * (dt * dt)));
    u[(3, 4)] = dt;

    let mut g = DMatrix::identity(5, 5);
    g.fixed_view_mut::<3, 1>(0, 3).copy_from(&(gravity * dt));
    g.fixed_view_mut::<3, 1>(0, 4)
        .copy_from(&(gravity * (-0.5 * dt * dt)));
    g[(3, 4)] = -dt;
    (g, u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuKinematics {
    pub gravity: Vector3<f64>,
}

impl Default for ImuKinematics {
    fn default() -> Self {
        Self {
            gravity: Vector3::new(0.0, 0.0, -9.80665),
        }
    }
}

impl ImuKinematics {
    pub fn new(gravity: Vector3<f64>) -> Self {
        Self { gravity }
    }

    fn matrices(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if !(dt > 0.0) {
            return Err(contract(format!("IMU model needs dt > 0, got {dt}")));
        }
        match x.as_group() {
            Some(g) if g.kind() == GroupKind::SE23 => {}
            _ => return Err(contract("IMU model needs an SE2(3) state")),
        }
        if u.dim() != 6 {
            return Err(contract("IMU input is [gyro(3); accel(3)]"));
        }
        let gyro = Vector3::new(u.u[0], u.u[1], u.u[2]);
        let accel = Vector3::new(u.u[3], u.u[4], u.u[5]);
        Ok(imu_increment_matrices(&gyro, &accel, &self.gravity, dt))
    }
}

impl ProcessModel for ImuKinematics {
    fn evaluate(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<ManifoldPoint> {
        let (g, um) = self.matrices(x, u, dt)?;
        let t = x.as_group().unwrap();
        let next = g * t.matrix() * um;
        x.with_element(lie::GroupElement::from_matrix(GroupKind::SE23, next)?)
    }

    fn jacobian(&self, x: &ManifoldPoint, u: &StampedInput, dt: f64) -> Result<DMatrix<f64>> {
        let (g, um) = self.matrices(x, u, dt)?;
        match x.side().unwrap() {
            // G T Exp(d) U = G T U Exp(vee(U^-1 d^ U))
            Side::Right => lie::conjugation_matrix(GroupKind::SE23, &um.try_inverse().unwrap()),
            // G Exp(d) T U = Exp(vee(G d^ G^-1)) G T U
            Side::Left => lie::conjugation_matrix(GroupKind::SE23, &g),
        }
    }
}
