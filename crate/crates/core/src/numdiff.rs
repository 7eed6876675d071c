//! Numerical Jacobians of maps between manifold points, by finite differences
//! or by complex step.
//!
//! Column `i` of the Jacobian of `f` at `x` is the derivative of
//! `f(x ⊕ t e_i) ⊖ f(x)` at `t = 0`. Steps are absolute.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;
use crate::state::ManifoldPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffMethod {
    Forward,
    Central,
    ComplexStep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffScheme {
    pub method: DiffMethod,
    pub step: f64,
}

impl DiffScheme {
    pub fn forward() -> Self {
        Self {
            method: DiffMethod::Forward,
            step: 1e-6,
        }
    }

    pub fn central() -> Self {
        Self {
            method: DiffMethod::Central,
            step: 1e-6,
        }
    }

    pub fn complex_step() -> Self {
        Self {
            method: DiffMethod::ComplexStep,
            step: 1e-16,
        }
    }

    pub fn with_step(self, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(contract(format!("difference step must be positive, got {step}")));
        }
        Ok(Self { step, ..self })
    }
}

impl Default for DiffScheme {
    fn default() -> Self {
        Self::central()
    }
}

/// A map between manifold points that can be differentiated.
///
/// Plain closures `Fn(&ManifoldPoint) -> ManifoldPoint` implement this trait
/// but cannot be complex-stepped; wrap a [`GenericManifoldFn`] in
/// [`ComplexCapable`] for that.
pub trait ManifoldFn {
    fn eval(&self, x: &ManifoldPoint) -> Result<ManifoldPoint>;

    /// Evaluation on complexified input; `None` when unsupported.
    fn eval_complex(&self, _x: &ManifoldPoint<Complex<f64>>) -> Option<Result<ManifoldPoint<Complex<f64>>>> {
        None
    }
}

impl<F> ManifoldFn for F
where
    F: Fn(&ManifoldPoint) -> ManifoldPoint,
{
    fn eval(&self, x: &ManifoldPoint) -> Result<ManifoldPoint> {
        Ok(self(x))
    }
}

/// Adapter for closures that can fail.
pub struct Fallible<F>(pub F);

impl<F> ManifoldFn for Fallible<F>
where
    F: Fn(&ManifoldPoint) -> Result<ManifoldPoint>,
{
    fn eval(&self, x: &ManifoldPoint) -> Result<ManifoldPoint> {
        (self.0)(x)
    }
}

/// A map written once for any scalar field.
pub trait GenericManifoldFn {
    fn call<T: Scalar>(&self, x: &ManifoldPoint<T>) -> Result<ManifoldPoint<T>>;
}

/// Marks a [`GenericManifoldFn`] as usable with [`DiffMethod::ComplexStep`].
pub struct ComplexCapable<F>(pub F);

impl<F: GenericManifoldFn> ManifoldFn for ComplexCapable<F> {
    fn eval(&self, x: &ManifoldPoint) -> Result<ManifoldPoint> {
        self.0.call(x)
    }

    fn eval_complex(&self, x: &ManifoldPoint<Complex<f64>>) -> Option<Result<ManifoldPoint<Complex<f64>>>> {
        Some(self.0.call(x))
    }
}

/// Jacobian `D f(x) / D x`, of size (codomain dof) x (domain dof).
pub fn jacobian<F: ManifoldFn + ?Sized>(
    f: &F,
    x: &ManifoldPoint,
    scheme: DiffScheme,
) -> Result<DMatrix<f64>> {
    if !(scheme.step > 0.0) {
        return Err(contract("difference step must be positive"));
    }
    let n = x.dof();
    let h = scheme.step;
    let y0 = f.eval(x)?;
    let m = y0.dof();
    let mut jac = DMatrix::zeros(m, n);
    match scheme.method {
        DiffMethod::Forward => {
            for i in 0..n {
                let mut dx = DVector::zeros(n);
                dx[i] = h;
                let col = f.eval(&x.oplus(&dx)?)?.ominus(&y0)? / h;
                jac.set_column(i, &col);
            }
        }
        DiffMethod::Central => {
            for i in 0..n {
                let mut dx = DVector::zeros(n);
                dx[i] = 0.5 * h;
                let plus = f.eval(&x.oplus(&dx)?)?.ominus(&y0)?;
                let minus = f.eval(&x.oplus(&-dx)?)?.ominus(&y0)?;
                jac.set_column(i, &((plus - minus) / h));
            }
        }
        DiffMethod::ComplexStep => {
            let xc = x.complexify();
            let y0c = y0.complexify();
            for i in 0..n {
                let mut dx = DVector::<Complex<f64>>::zeros(n);
                dx[i] = Complex::new(0.0, h);
                let yc = f
                    .eval_complex(&xc.oplus(&dx)?)
                    .ok_or_else(|| {
                        Error::UnsupportedScheme(
                            "complex step needs a function generic over the scalar field".into(),
                        )
                    })??;
                let diff = yc.ominus(&y0c)?;
                jac.set_column(i, &diff.map(|v| v.im / h));
            }
        }
    }
    Ok(jac)
}

/// Jacobian of a plain vector map.
pub fn jacobian_vector<F>(f: F, x: &DVector<f64>, scheme: DiffScheme) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let wrapped = |p: &ManifoldPoint| {
        ManifoldPoint::vector(f(p.as_vector().expect("vector point")))
    };
    jacobian(&wrapped, &ManifoldPoint::vector(x.clone()), scheme)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{group_jacobian, GroupKind, Side, TangentVector};
    use approx::assert_relative_eq;

    struct Square;

    impl GenericManifoldFn for Square {
        fn call<T: Scalar>(&self, x: &ManifoldPoint<T>) -> Result<ManifoldPoint<T>> {
            let v = x.as_vector().unwrap();
            Ok(ManifoldPoint::vector(v.component_mul(v)))
        }
    }

    #[test]
    fn identity_map() {
        let x = ManifoldPoint::from_slice(&[1.0, -2.0, 0.5]);
        let j = jacobian(&|p: &ManifoldPoint| p.clone(), &x, DiffScheme::forward()).unwrap();
        assert_relative_eq!(j, DMatrix::identity(3, 3), epsilon = 1e-9);
    }

    #[test]
    fn scalar_square() {
        let x = ManifoldPoint::from_slice(&[3.0]);
        let j = jacobian(&ComplexCapable(Square), &x, DiffScheme::forward()).unwrap();
        assert!((j[(0, 0)] - 6.0).abs() < 1e-5);
        let j = jacobian(&ComplexCapable(Square), &x, DiffScheme::complex_step()).unwrap();
        assert!((j[(0, 0)] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn complex_step_on_plain_closure_is_rejected() {
        let x = ManifoldPoint::from_slice(&[1.0]);
        let err = jacobian(&|p: &ManifoldPoint| p.clone(), &x, DiffScheme::complex_step()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedScheme(_)));
    }

    #[test]
    fn exp_jacobian_matches_closed_form() {
        // f(xi) = Exp(xi) as a map from a vector to a group point.
        let xi = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        for side in [Side::Left, Side::Right] {
            let f = move |p: &ManifoldPoint| {
                let t = TangentVector::new(GroupKind::SO3, p.as_vector().unwrap().clone()).unwrap();
                ManifoldPoint::group(t.exp(), side)
            };
            let j = jacobian(&f, &ManifoldPoint::vector(xi.clone()), DiffScheme::forward()).unwrap();
            let want = group_jacobian(&TangentVector::new(GroupKind::SO3, xi.clone()).unwrap(), side);
            assert_relative_eq!(j, want, epsilon = 1e-6);
        }
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(DiffScheme::forward().with_step(0.0).is_err());
        assert!(DiffScheme::forward().with_step(-1.0).is_err());
    }
}
