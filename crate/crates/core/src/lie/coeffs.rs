//! Trigonometric coefficient functions shared by the closed-form Exp, Log and
//! Jacobian formulas. Each one falls back to its Taylor series near zero, where
//! the closed form suffers from cancellation.

use crate::scalar::Scalar;

/// Below this angle the series expansions replace the closed forms.
pub const SERIES_THRESHOLD: f64 = 1e-2;

fn horner<T: Scalar>(t2: T, coeffs: &[f64]) -> T {
    coeffs
        .iter()
        .rev()
        .fold(T::zero(), |acc, &c| acc * t2 + T::lit(c))
}

/// All coefficients for a rotation of angle `theta`, where `theta` may be
/// complex. `t2` is the squared angle.
#[derive(Debug, Clone, Copy)]
pub struct AngleCoeffs<T: Scalar> {
    pub theta: T,
    pub t2: T,
    /// sin(t)/t
    pub a: T,
    /// (1 - cos t)/t^2
    pub b: T,
    /// (t - sin t)/t^3
    pub c: T,
    /// (t^2 + 2 cos t - 2)/(2 t^4)
    pub d: T,
    /// (2t - 3 sin t + t cos t)/(2 t^5)
    pub e: T,
}

impl<T: Scalar> AngleCoeffs<T> {
    /// Coefficients from the squared angle. The angle is recovered with an
    /// analytic square root, so the imaginary parts stay consistent.
    pub fn from_t2(t2: T) -> Self {
        let theta = t2.sqrt();
        if theta.magnitude() < SERIES_THRESHOLD {
            Self {
                theta,
                t2,
                a: horner(t2, &[1.0, -1.0 / 6.0, 1.0 / 120.0, -1.0 / 5040.0, 1.0 / 362880.0]),
                b: horner(t2, &[0.5, -1.0 / 24.0, 1.0 / 720.0, -1.0 / 40320.0, 1.0 / 3628800.0]),
                c: horner(
                    t2,
                    &[1.0 / 6.0, -1.0 / 120.0, 1.0 / 5040.0, -1.0 / 362880.0, 1.0 / 39916800.0],
                ),
                d: horner(
                    t2,
                    &[1.0 / 24.0, -1.0 / 720.0, 1.0 / 40320.0, -1.0 / 3628800.0, 1.0 / 479001600.0],
                ),
                e: horner(
                    t2,
                    &[1.0 / 120.0, -1.0 / 2520.0, 1.0 / 120960.0, -1.0 / 9979200.0, 1.0 / 1245404160.0],
                ),
            }
        } else {
            let (s, c) = (theta.sin(), theta.cos());
            let one = T::one();
            let two = T::lit(2.0);
            let three = T::lit(3.0);
            let t3 = t2 * theta;
            let t4 = t2 * t2;
            Self {
                theta,
                t2,
                a: s / theta,
                b: (one - c) / t2,
                c: (theta - s) / t3,
                d: (t2 + two * c - two) / (two * t4),
                e: (two * theta - three * s + theta * c) / (two * t4 * theta),
            }
        }
    }

    /// theta / (2 sin theta), used by the SO(3) logarithm.
    pub fn log_coeff(&self) -> T {
        if self.theta.magnitude() < SERIES_THRESHOLD {
            horner(
                self.t2,
                &[0.5, 1.0 / 12.0, 7.0 / 720.0, 31.0 / 30240.0, 127.0 / 1209600.0],
            )
        } else {
            self.theta / (T::lit(2.0) * self.theta.sin())
        }
    }

    /// 1/t^2 - (1 + cos t)/(2 t sin t), the quadratic coefficient of the
    /// inverse left Jacobian of SO(3).
    pub fn jinv_coeff(&self) -> T {
        if self.theta.magnitude() < SERIES_THRESHOLD {
            horner(
                self.t2,
                &[1.0 / 12.0, 1.0 / 720.0, 1.0 / 30240.0, 1.0 / 1209600.0, 1.0 / 47900160.0],
            )
        } else {
            let one = T::one();
            one / self.t2
                - (one + self.theta.cos()) / (T::lit(2.0) * self.theta * self.theta.sin())
        }
    }
}
