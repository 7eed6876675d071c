//! Rotation-group building blocks on fixed-size 3x3 matrices. The extended
//! groups SE(3) and SE2(3) are assembled from these.

use nalgebra::{Matrix3, Vector3};

use super::coeffs::AngleCoeffs;
use crate::scalar::Scalar;

pub fn skew<T: Scalar>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v[2], v[1], v[2], z, -v[0], -v[1], v[0], z)
}

pub fn unskew<T: Scalar>(m: &Matrix3<T>) -> Vector3<T> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn coeffs<T: Scalar>(phi: &Vector3<T>) -> AngleCoeffs<T> {
    AngleCoeffs::from_t2(phi.dot(phi))
}

pub fn exp<T: Scalar>(phi: &Vector3<T>) -> Matrix3<T> {
    let k = coeffs(phi);
    let w = skew(phi);
    Matrix3::identity() + w * k.a + w * w * k.b
}

/// Principal logarithm, rotation angle in [0, pi].
pub fn log<T: Scalar>(c: &Matrix3<T>) -> Vector3<T> {
    let half = T::lit(0.5);
    let cos_t = ((c[(0, 0)] + c[(1, 1)] + c[(2, 2)] - T::one()) * half).clamp_re(-1.0, 1.0);
    let s = unskew(&(c - c.transpose())) * half;
    let sin_t = s.dot(&s).sqrt();
    let theta = T::atan2(sin_t, cos_t);

    if cos_t.re() > -1.0 + 1e-6 {
        let k = AngleCoeffs::from_t2(theta * theta);
        return s * (k.log_coeff() * T::lit(2.0));
    }

    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part instead: (C + C^T)/2 - cos(t) I = (1 - cos t) a a^T.
    let sym = (c + c.transpose()) * half - Matrix3::identity() * cos_t;
    let one_minus_c = T::one() - cos_t;
    let k = (0..3)
        .max_by(|&i, &j| sym[(i, i)].re().total_cmp(&sym[(j, j)].re()))
        .unwrap_or(0);
    let mut axis: Vector3<T> = sym.column(k) / (sym[(k, k)] * one_minus_c).sqrt();
    let along = axis.dot(&s).re();
    if along < -1e-12 {
        axis = -axis;
    } else if along.abs() <= 1e-12 {
        // Exactly pi: first non-negligible component positive.
        if let Some(first) = axis.iter().find(|v| v.re().abs() > 1e-12) {
            if first.re() < 0.0 {
                axis = -axis;
            }
        }
    }
    axis * theta
}

pub fn left_jacobian<T: Scalar>(phi: &Vector3<T>) -> Matrix3<T> {
    let k = coeffs(phi);
    let w = skew(phi);
    Matrix3::identity() + w * k.b + w * w * k.c
}

pub fn left_jacobian_inv<T: Scalar>(phi: &Vector3<T>) -> Matrix3<T> {
    let k = coeffs(phi);
    let w = skew(phi);
    Matrix3::identity() - w * T::lit(0.5) + w * w * k.jinv_coeff()
}

/// Second-order integral sum_n phi^n/(n+2)!, the position-integration matrix
/// used for exact constant-rate IMU kinematics.
pub fn double_integral<T: Scalar>(phi: &Vector3<T>) -> Matrix3<T> {
    let k = coeffs(phi);
    let w = skew(phi);
    Matrix3::identity() * T::lit(0.5) + w * k.c + w * w * k.d
}

/// Coupling block of the SE(3)-type left Jacobian for translation-like
/// coordinates `rho` paired with rotation `phi`.
pub fn q_block<T: Scalar>(phi: &Vector3<T>, rho: &Vector3<T>) -> Matrix3<T> {
    let k = coeffs(phi);
    let p = skew(phi);
    let r = skew(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    let pp = p * p;
    r * T::lit(0.5)
        + (pr + rp + prp) * k.c
        + (pp * r + rp * p - prp * T::lit(3.0)) * k.d
        + (prp * p + pp * r * p) * k.e
}
