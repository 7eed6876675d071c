//! Scalar field abstraction so that the Lie group formulas can be evaluated on
//! real numbers and on complex numbers (for complex-step differentiation).

use nalgebra::{Complex, ComplexField};

/// A real or complex scalar with `f64` as its real field.
pub trait Scalar: ComplexField<RealField = f64> + Copy {
    fn lit(x: f64) -> Self {
        Self::from_real(x)
    }

    /// Real part.
    fn re(self) -> f64 {
        self.real()
    }

    /// Size used for branch decisions (absolute value / complex modulus).
    fn magnitude(self) -> f64 {
        self.modulus()
    }

    /// Two-argument arctangent. For complex arguments the imaginary part is the
    /// first-order analytic continuation, which is exact for complex-step use.
    fn atan2(y: Self, x: Self) -> Self;

    /// Clamp the real part into `[lo, hi]`, leaving any imaginary part as is.
    fn clamp_re(self, lo: f64, hi: f64) -> Self;
}

impl Scalar for f64 {
    fn atan2(y: Self, x: Self) -> Self {
        f64::atan2(y, x)
    }

    fn clamp_re(self, lo: f64, hi: f64) -> Self {
        self.clamp(lo, hi)
    }
}

impl Scalar for Complex<f64> {
    fn atan2(y: Self, x: Self) -> Self {
        let denom = x.re * x.re + y.re * y.re;
        let im = if denom > 0.0 {
            (x.re * y.im - y.re * x.im) / denom
        } else {
            0.0
        };
        Complex::new(y.re.atan2(x.re), im)
    }

    fn clamp_re(self, lo: f64, hi: f64) -> Self {
        Complex::new(self.re.clamp(lo, hi), self.im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_atan2_derivative() {
        // d/dh atan2(y + h, x) = x / (x^2 + y^2)
        let (x, y) = (0.7, -0.4);
        let h = 1e-20;
        let z = <Complex<f64> as Scalar>::atan2(Complex::new(y, h), Complex::new(x, 0.0));
        assert!((z.re - y.atan2(x)).abs() < 1e-15);
        assert!((z.im / h - x / (x * x + y * y)).abs() < 1e-12);
    }
}
