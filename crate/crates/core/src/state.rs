//! Manifold-valued states with generalized addition and subtraction.
//!
//! A [`ManifoldPoint`] is a vector, a group element carrying its own
//! perturbation side, or an ordered composite of other points. Filters only
//! ever use `oplus`/`ominus`, so the same estimator runs on all of them.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::error::{contract, Error, Result};
use crate::lie::{self, GroupElement, GroupKind, Side, TangentVector};
use crate::scalar::Scalar;

pub type PerturbationSide = Side;

#[derive(Debug, Clone, PartialEq)]
pub enum PointValue<T: Scalar = f64> {
    Vector(DVector<T>),
    Group { element: GroupElement<T>, side: Side },
    Composite(Vec<ManifoldPoint<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint<T: Scalar = f64> {
    value: PointValue<T>,
    pub stamp: Option<f64>,
    pub state_id: Option<String>,
}

impl<T: Scalar> ManifoldPoint<T> {
    pub fn vector(v: DVector<T>) -> Self {
        Self::from_value(PointValue::Vector(v))
    }

    pub fn from_slice(v: &[T]) -> Self {
        Self::vector(DVector::from_column_slice(v))
    }

    pub fn group(element: GroupElement<T>, side: Side) -> Self {
        Self::from_value(PointValue::Group { element, side })
    }

    pub fn composite(children: Vec<ManifoldPoint<T>>) -> Self {
        Self::from_value(PointValue::Composite(children))
    }

    fn from_value(value: PointValue<T>) -> Self {
        Self {
            value,
            stamp: None,
            state_id: None,
        }
    }

    pub fn with_stamp(mut self, stamp: f64) -> Self {
        self.stamp = Some(stamp);
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.state_id = Some(id.into());
        self
    }

    pub fn value(&self) -> &PointValue<T> {
        &self.value
    }

    pub fn dof(&self) -> usize {
        match &self.value {
            PointValue::Vector(v) => v.len(),
            PointValue::Group { element, .. } => element.kind().dof(),
            PointValue::Composite(children) => children.iter().map(|c| c.dof()).sum(),
        }
    }

    /// Perturbation side of a group point; `None` for vectors and composites.
    pub fn side(&self) -> Option<Side> {
        match &self.value {
            PointValue::Group { side, .. } => Some(*side),
            _ => None,
        }
    }

    pub fn as_group(&self) -> Option<&GroupElement<T>> {
        match &self.value {
            PointValue::Group { element, .. } => Some(element),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<T>> {
        match &self.value {
            PointValue::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn children(&self) -> Option<&[ManifoldPoint<T>]> {
        match &self.value {
            PointValue::Composite(c) => Some(c),
            _ => None,
        }
    }

    /// Child of a composite whose `state_id` matches.
    pub fn child_by_id(&self, id: &str) -> Option<&ManifoldPoint<T>> {
        self.children()?
            .iter()
            .find(|c| c.state_id.as_deref() == Some(id))
    }

    /// True when both points have the same kinds, sizes and sides throughout.
    pub fn same_structure(&self, other: &Self) -> bool {
        match (&self.value, &other.value) {
            (PointValue::Vector(a), PointValue::Vector(b)) => a.len() == b.len(),
            (
                PointValue::Group { element: a, side: sa },
                PointValue::Group { element: b, side: sb },
            ) => a.kind() == b.kind() && sa == sb,
            (PointValue::Composite(a), PointValue::Composite(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_structure(y))
            }
            _ => false,
        }
    }

    /// Same point with the group element replaced, keeping side, stamp and id.
    pub fn with_element(&self, element: GroupElement<T>) -> Result<Self> {
        match &self.value {
            PointValue::Group { element: old, side } if old.kind() == element.kind() => Ok(Self {
                value: PointValue::Group { element, side: *side },
                stamp: self.stamp,
                state_id: self.state_id.clone(),
            }),
            _ => Err(contract("with_element needs a group point of the same kind")),
        }
    }

    /// Same point with the vector replaced, keeping stamp and id.
    pub fn with_vector(&self, v: DVector<T>) -> Result<Self> {
        match &self.value {
            PointValue::Vector(old) if old.len() == v.len() => Ok(Self {
                value: PointValue::Vector(v),
                stamp: self.stamp,
                state_id: self.state_id.clone(),
            }),
            _ => Err(contract("with_vector needs a vector point of the same length")),
        }
    }

    /// Copy with the stamp cleared or replaced.
    pub fn restamped(&self, stamp: Option<f64>) -> Self {
        let mut out = self.clone();
        out.stamp = stamp;
        out
    }

    /// Generalized addition. Vectors add; groups apply `X Exp(dx)` (right) or
    /// `Exp(dx) X` (left); composites split `dx` in child order.
    pub fn oplus(&self, dx: &DVector<T>) -> Result<Self> {
        if dx.len() != self.dof() {
            return Err(contract(format!(
                "oplus increment has length {}, state dof is {}",
                dx.len(),
                self.dof()
            )));
        }
        let value = match &self.value {
            PointValue::Vector(v) => PointValue::Vector(v + dx),
            PointValue::Group { element, side } => {
                let delta = TangentVector::new(element.kind(), dx.clone())?.exp();
                let element = match side {
                    Side::Right => lie::compose(element, &delta)?,
                    Side::Left => lie::compose(&delta, element)?,
                };
                PointValue::Group {
                    element,
                    side: *side,
                }
            }
            PointValue::Composite(children) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(children.len());
                for child in children {
                    let n = child.dof();
                    out.push(child.oplus(&dx.rows(offset, n).into_owned())?);
                    offset += n;
                }
                PointValue::Composite(out)
            }
        };
        Ok(Self {
            value,
            stamp: self.stamp,
            state_id: self.state_id.clone(),
        })
    }

    /// Generalized subtraction `self ⊖ other`, expressed in `other`'s tangent space.
    pub fn ominus(&self, other: &Self) -> Result<DVector<T>> {
        match (&self.value, &other.value) {
            (PointValue::Vector(a), PointValue::Vector(b)) if a.len() == b.len() => Ok(a - b),
            (
                PointValue::Group { element: x, side: sx },
                PointValue::Group { element: y, side: sy },
            ) if x.kind() == y.kind() && sx == sy => {
                let rel = match sx {
                    Side::Right => lie::compose(&y.inverse(), x)?,
                    Side::Left => lie::compose(x, &y.inverse())?,
                };
                Ok(rel.log().coords)
            }
            (PointValue::Composite(a), PointValue::Composite(b)) if a.len() == b.len() => {
                let parts = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| x.ominus(y))
                    .collect::<Result<Vec<_>>>()?;
                let total = parts.iter().map(|p| p.len()).sum();
                let mut out = DVector::zeros(total);
                let mut offset = 0;
                for p in parts {
                    out.rows_mut(offset, p.len()).copy_from(&p);
                    offset += p.len();
                }
                Ok(out)
            }
            _ => Err(contract("ominus needs states of identical structure and side")),
        }
    }
}

impl ManifoldPoint<f64> {
    /// Promotes to complex scalars (zero imaginary part).
    pub fn complexify(&self) -> ManifoldPoint<Complex<f64>> {
        let value = match &self.value {
            PointValue::Vector(v) => PointValue::Vector(v.map(|x| Complex::new(x, 0.0))),
            PointValue::Group { element, side } => PointValue::Group {
                element: element.complexify(),
                side: *side,
            },
            PointValue::Composite(c) => {
                PointValue::Composite(c.iter().map(|p| p.complexify()).collect())
            }
        };
        ManifoldPoint {
            value,
            stamp: self.stamp,
            state_id: self.state_id.clone(),
        }
    }

    /// Jacobians of `x ⊖ y` with respect to perturbations of `x` and of `y`.
    pub fn ominus_jacobians(x: &Self, y: &Self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match (&x.value, &y.value) {
            (PointValue::Vector(a), PointValue::Vector(b)) if a.len() == b.len() => {
                let n = a.len();
                Ok((DMatrix::identity(n, n), -DMatrix::identity(n, n)))
            }
            (PointValue::Group { side, .. }, PointValue::Group { .. }) => {
                let e = TangentVector::new(x.as_group().unwrap().kind(), x.ominus(y)?)?;
                let (jx, jy) = match side {
                    Side::Right => (
                        lie::group_jacobian_inv(&e, Side::Right),
                        -lie::group_jacobian_inv(&e, Side::Left),
                    ),
                    Side::Left => (
                        lie::group_jacobian_inv(&e, Side::Left),
                        -lie::group_jacobian_inv(&e, Side::Right),
                    ),
                };
                Ok((jx, jy))
            }
            (PointValue::Composite(a), PointValue::Composite(b)) if a.len() == b.len() => {
                let n = x.dof();
                let mut jx = DMatrix::zeros(n, n);
                let mut jy = DMatrix::zeros(n, n);
                let mut offset = 0;
                for (ca, cb) in a.iter().zip(b) {
                    let (bx, by) = Self::ominus_jacobians(ca, cb)?;
                    let m = ca.dof();
                    jx.view_mut((offset, offset), (m, m)).copy_from(&bx);
                    jy.view_mut((offset, offset), (m, m)).copy_from(&by);
                    offset += m;
                }
                Ok((jx, jy))
            }
            _ => Err(contract("ominus needs states of identical structure and side")),
        }
    }

    pub fn to_json(&self) -> Value {
        let mut doc = match &self.value {
            PointValue::Vector(v) => json!({"kind": "vector", "data": v.as_slice()}),
            PointValue::Group { element, side } => {
                let m = element.matrix();
                let row_major: Vec<f64> = (0..m.nrows())
                    .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
                    .collect();
                json!({
                    "kind": element.kind().name(),
                    "side": side,
                    "matrix": row_major,
                })
            }
            PointValue::Composite(children) => json!({
                "kind": "composite",
                "children": children.iter().map(|c| c.to_json()).collect::<Vec<_>>(),
            }),
        };
        if let Some(stamp) = self.stamp {
            doc["stamp"] = json!(stamp);
        }
        if let Some(id) = &self.state_id {
            doc["state_id"] = json!(id);
        }
        doc
    }

    pub fn from_json(doc: &Value) -> Result<Self> {
        let bad = |what: &str| Error::Contract(format!("invalid state document: {what}"));
        let kind = doc.get("kind").and_then(Value::as_str).ok_or_else(|| bad("missing kind"))?;
        let floats = |key: &str| -> Result<Vec<f64>> {
            doc.get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| bad(key))?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| bad(key)))
                .collect()
        };
        let mut point = match kind {
            "vector" => Self::from_slice(&floats("data")?),
            "composite" => {
                let children = doc
                    .get("children")
                    .and_then(Value::as_array)
                    .ok_or_else(|| bad("children"))?
                    .iter()
                    .map(Self::from_json)
                    .collect::<Result<Vec<_>>>()?;
                Self::composite(children)
            }
            name => {
                let group = GroupKind::ALL
                    .into_iter()
                    .find(|k| k.name() == name)
                    .ok_or_else(|| bad("unknown kind"))?;
                let side: Side = serde_json::from_value(doc.get("side").cloned().unwrap_or(Value::Null))
                    .map_err(|_| bad("side"))?;
                let n = group.matrix_dim();
                let data = floats("matrix")?;
                if data.len() != n * n {
                    return Err(bad("matrix size"));
                }
                let element = GroupElement::from_matrix(group, DMatrix::from_row_slice(n, n, &data))?;
                element.check(1e-9)?;
                Self::group(element, side)
            }
        };
        point.stamp = doc.get("stamp").and_then(Value::as_f64);
        point.state_id = doc.get("state_id").and_then(Value::as_str).map(str::to_owned);
        Ok(point)
    }
}

impl Serialize for ManifoldPoint<f64> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ManifoldPoint<f64> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Self::from_json(&v).map_err(serde::de::Error::custom)
    }
}

/// Report produced by [`belief_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefDiagnostics {
    /// max |P - P^T| of the checked matrix.
    pub symmetry_defect: f64,
    pub min_eigenvalue: f64,
    pub dof_consistent: bool,
    /// Smallest eigenvalue below -1e-10.
    pub indefinite: bool,
}

impl BeliefDiagnostics {
    pub fn ok(&self) -> bool {
        self.dof_consistent && !self.indefinite && self.symmetry_defect <= 1e-12
    }

    fn of(mean: &ManifoldPoint, cov: &DMatrix<f64>) -> Self {
        let dof_consistent = cov.nrows() == mean.dof() && cov.ncols() == mean.dof();
        if !cov.is_square() {
            return Self {
                symmetry_defect: f64::INFINITY,
                min_eigenvalue: f64::NAN,
                dof_consistent,
                indefinite: true,
            };
        }
        let symmetry_defect = (cov - cov.transpose()).amax();
        let sym = symmetrize(cov);
        let min_eigenvalue = if sym.nrows() == 0 {
            0.0
        } else {
            sym.symmetric_eigenvalues().min()
        };
        Self {
            symmetry_defect,
            min_eigenvalue,
            dof_consistent,
            indefinite: min_eigenvalue < -1e-10,
        }
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Mean and tangent-space covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: ManifoldPoint,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    /// Builds a belief, symmetrizing the covariance. Fails on a size mismatch.
    pub fn new(mean: ManifoldPoint, covariance: DMatrix<f64>) -> Result<Self> {
        Self::with_diagnostics(mean, covariance).map(|(b, _)| b)
    }

    /// Like [`GaussianBelief::new`], also returning diagnostics of the raw input.
    pub fn with_diagnostics(
        mean: ManifoldPoint,
        covariance: DMatrix<f64>,
    ) -> Result<(Self, BeliefDiagnostics)> {
        let diag = BeliefDiagnostics::of(&mean, &covariance);
        if !diag.dof_consistent {
            return Err(contract(format!(
                "covariance is {}x{}, state dof is {}",
                covariance.nrows(),
                covariance.ncols(),
                mean.dof()
            )));
        }
        let covariance = symmetrize(&covariance);
        Ok((Self { mean, covariance }, diag))
    }

    pub fn dof(&self) -> usize {
        self.mean.dof()
    }

    pub fn stamp(&self) -> Option<f64> {
        self.mean.stamp
    }

    pub fn to_json(&self) -> Value {
        let n = self.covariance.nrows();
        let cov: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).map(move |j| self.covariance[(i, j)]))
            .collect();
        json!({"mean": self.mean.to_json(), "covariance": cov})
    }

    pub fn from_json(doc: &Value) -> Result<Self> {
        let mean = ManifoldPoint::from_json(doc.get("mean").unwrap_or(&Value::Null))?;
        let cov: Vec<f64> = doc
            .get("covariance")
            .and_then(Value::as_array)
            .ok_or_else(|| contract("belief document lacks covariance"))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| contract("non-numeric covariance entry")))
            .collect::<Result<_>>()?;
        let n = mean.dof();
        if cov.len() != n * n {
            return Err(contract("covariance size does not match state dof"));
        }
        Self::new(mean, DMatrix::from_row_slice(n, n, &cov))
    }
}

/// Symmetry, definiteness and dimension report for a belief.
pub fn belief_check(belief: &GaussianBelief) -> BeliefDiagnostics {
    BeliefDiagnostics::of(&belief.mean, &belief.covariance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn se3(v: &[f64]) -> GroupElement {
        TangentVector::from_slice(GroupKind::SE3, v).unwrap().exp()
    }

    #[test]
    fn vector_oplus_ominus() {
        let x = ManifoldPoint::from_slice(&[1.0, 2.0]);
        let y = x.oplus(&DVector::from_vec(vec![0.1, -0.2])).unwrap();
        assert_relative_eq!(y.as_vector().unwrap().as_slice()[0], 1.1);
        assert_relative_eq!(y.as_vector().unwrap().as_slice()[1], 1.8);
        let a = ManifoldPoint::from_slice(&[3.0]);
        let b = ManifoldPoint::from_slice(&[1.0]);
        assert_eq!(a.ominus(&b).unwrap()[0], 2.0);
        assert_eq!(a.ominus(&b).unwrap(), -b.ominus(&a).unwrap());
    }

    #[test]
    fn oplus_zero_and_self_difference() {
        for side in [Side::Left, Side::Right] {
            let x = ManifoldPoint::group(se3(&[0.1, 0.2, -0.3, 1.0, 2.0, 3.0]), side);
            assert_eq!(x.oplus(&DVector::zeros(6)).unwrap(), x);
            assert_relative_eq!(x.ominus(&x).unwrap(), DVector::zeros(6), epsilon = 1e-15);
        }
    }

    #[test]
    fn composite_splits_increment() {
        let pose = ManifoldPoint::group(se3(&[0.3, 0.0, 0.1, 1.0, 0.0, 0.0]), Side::Right);
        let bias = ManifoldPoint::from_slice(&[0.5, 0.5, 0.5]);
        let x = ManifoldPoint::composite(vec![pose.clone(), bias.clone()]);
        assert_eq!(x.dof(), 9);
        let dx = DVector::from_vec(vec![0.01, 0.02, 0.03, 0.1, 0.2, 0.3, 1.0, 2.0, 3.0]);
        let y = x.oplus(&dx).unwrap();
        let children = y.children().unwrap();
        assert_eq!(children[0], pose.oplus(&dx.rows(0, 6).into_owned()).unwrap());
        assert_eq!(children[1], bias.oplus(&dx.rows(6, 3).into_owned()).unwrap());
        assert_relative_eq!(y.ominus(&x).unwrap(), dx, epsilon = 1e-12);
    }

    #[test]
    fn dimension_and_structure_errors() {
        let x = ManifoldPoint::from_slice(&[1.0, 2.0]);
        assert!(x.oplus(&DVector::zeros(3)).is_err());
        let g = ManifoldPoint::group(GroupElement::identity(GroupKind::SO2), Side::Right);
        let h = ManifoldPoint::group(GroupElement::identity(GroupKind::SO2), Side::Left);
        assert!(g.ominus(&h).is_err());
        assert!(g.ominus(&ManifoldPoint::from_slice(&[0.0])).is_err());
    }

    #[test]
    fn stamp_and_id_pass_through() {
        let x = ManifoldPoint::from_slice(&[1.0]).with_stamp(2.5).with_id("x0");
        let y = x.oplus(&DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(y.stamp, Some(2.5));
        assert_eq!(y.state_id.as_deref(), Some("x0"));
    }

    #[test]
    fn belief_diagnostics() {
        let x = ManifoldPoint::from_slice(&[0.0, 0.0]);
        let (b, d) = GaussianBelief::with_diagnostics(x.clone(), DMatrix::identity(2, 2)).unwrap();
        assert!(d.ok());
        assert!(belief_check(&b).ok());

        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        let (b, d) = GaussianBelief::with_diagnostics(x.clone(), asym).unwrap();
        assert_relative_eq!(d.symmetry_defect, 0.2);
        assert_eq!(b.covariance, DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]));

        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        let (_, d) = GaussianBelief::with_diagnostics(x.clone(), indefinite).unwrap();
        assert!(d.indefinite);
        assert_relative_eq!(d.min_eigenvalue, -1e-3);

        assert!(GaussianBelief::new(x, DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let pose = ManifoldPoint::group(se3(&[0.3, -0.2, 0.1, 1.0, 2.0, 3.0]), Side::Left);
        let x = ManifoldPoint::composite(vec![pose, ManifoldPoint::from_slice(&[4.0])])
            .with_stamp(1.25)
            .with_id("x");
        let b = GaussianBelief::new(x, DMatrix::identity(7, 7) * 0.5).unwrap();
        let doc = b.to_json();
        assert_eq!(doc["mean"]["children"][0]["kind"], "SE3");
        assert_eq!(doc["mean"]["children"][0]["side"], "left");
        let back = GaussianBelief::from_json(&doc).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn ominus_jacobians_match_finite_differences() {
        for side in [Side::Left, Side::Right] {
            let x = ManifoldPoint::group(se3(&[0.3, -0.2, 0.6, 1.0, 2.0, 3.0]), side);
            let y = ManifoldPoint::group(se3(&[0.1, 0.4, -0.2, -1.0, 0.5, 0.0]), side);
            let (jx, jy) = ManifoldPoint::ominus_jacobians(&x, &y).unwrap();
            let h = 1e-6;
            for i in 0..6 {
                let mut d = DVector::zeros(6);
                d[i] = h;
                let fx = (x.oplus(&d).unwrap().ominus(&y).unwrap()
                    - x.oplus(&-&d).unwrap().ominus(&y).unwrap())
                    / (2.0 * h);
                let fy = (x.ominus(&y.oplus(&d).unwrap()).unwrap()
                    - x.ominus(&y.oplus(&-&d).unwrap()).unwrap())
                    / (2.0 * h);
                assert_relative_eq!(fx, jx.column(i).into_owned(), epsilon = 1e-7);
                assert_relative_eq!(fy, jy.column(i).into_owned(), epsilon = 1e-7);
            }
        }
    }
}
