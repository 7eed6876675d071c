//! Closed-form matrix Lie groups: SO(2), SO(3), SE(2), SE(3) and SE2(3).
//!
//! Tangent coordinates are ordered rotation first:
//!
//! * SO(2): `[theta]`
//! * SO(3): `[phi(3)]`
//! * SE(2): `[theta; rho(2)]`
//! * SE(3): `[phi(3); rho(3)]`
//! * SE2(3): `[phi(3); nu(3); rho(3)]` (rotation, velocity, position)
//!
//! Every formula is generic over [`Scalar`] so that the same code runs on
//! complexified matrices for complex-step differentiation.

mod coeffs;
pub mod so3;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

pub use coeffs::SERIES_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupKind {
    SO2,
    SO3,
    SE2,
    SE3,
    #[serde(rename = "SE2_3")]
    SE23,
}

impl GroupKind {
    pub const ALL: [GroupKind; 5] = [
        GroupKind::SO2,
        GroupKind::SO3,
        GroupKind::SE2,
        GroupKind::SE3,
        GroupKind::SE23,
    ];

    pub fn dof(self) -> usize {
        match self {
            GroupKind::SO2 => 1,
            GroupKind::SO3 | GroupKind::SE2 => 3,
            GroupKind::SE3 => 6,
            GroupKind::SE23 => 9,
        }
    }

    pub fn matrix_dim(self) -> usize {
        match self {
            GroupKind::SO2 => 2,
            GroupKind::SO3 | GroupKind::SE2 => 3,
            GroupKind::SE3 => 4,
            GroupKind::SE23 => 5,
        }
    }

    /// Dimension of the space the group acts on (2 for planar groups, 3 otherwise).
    pub fn action_dim(self) -> usize {
        match self {
            GroupKind::SO2 | GroupKind::SE2 => 2,
            _ => 3,
        }
    }

    /// Size of the rotation block.
    pub fn rotation_dim(self) -> usize {
        self.action_dim()
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::SO2 => "SO2",
            GroupKind::SO3 => "SO3",
            GroupKind::SE2 => "SE2",
            GroupKind::SE3 => "SE3",
            GroupKind::SE23 => "SE2_3",
        }
    }

    /// Number of rotational tangent coordinates.
    pub fn rotation_dof(self) -> usize {
        match self {
            GroupKind::SO2 | GroupKind::SE2 => 1,
            _ => 3,
        }
    }
}

/// Which side a perturbation multiplies on; selects left or right Jacobians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// A group element stored as its matrix representation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement<T: Scalar = f64> {
    kind: GroupKind,
    matrix: DMatrix<T>,
}

/// Tangent-space coordinates of a group.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<T: Scalar = f64> {
    pub kind: GroupKind,
    pub coords: DVector<T>,
}

impl<T: Scalar> TangentVector<T> {
    pub fn new(kind: GroupKind, coords: DVector<T>) -> Result<Self> {
        if coords.len() != kind.dof() {
            return Err(contract(format!(
                "{} tangent needs {} coordinates, got {}",
                kind.name(),
                kind.dof(),
                coords.len()
            )));
        }
        Ok(Self { kind, coords })
    }

    pub fn from_slice(kind: GroupKind, coords: &[T]) -> Result<Self> {
        Self::new(kind, DVector::from_column_slice(coords))
    }

    pub fn zeros(kind: GroupKind) -> Self {
        Self {
            kind,
            coords: DVector::zeros(kind.dof()),
        }
    }

    pub fn exp(&self) -> GroupElement<T> {
        exp_map(self)
    }

    pub fn wedge(&self) -> DMatrix<T> {
        wedge(self)
    }
}

fn vec3<T: Scalar>(v: &DVector<T>, start: usize) -> Vector3<T> {
    Vector3::new(v[start], v[start + 1], v[start + 2])
}

fn rot3<T: Scalar>(m: &DMatrix<T>) -> Matrix3<T> {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

fn col3<T: Scalar>(m: &DMatrix<T>, col: usize) -> Vector3<T> {
    m.fixed_view::<3, 1>(0, col).into_owned()
}

fn so2<T: Scalar>(theta: T) -> Matrix2<T> {
    let (s, c) = (theta.sin(), theta.cos());
    Matrix2::new(c, -s, s, c)
}

/// Planar V matrix: sum_n (theta J)^n/(n+1)!.
fn se2_v<T: Scalar>(theta: T) -> Matrix2<T> {
    let k = coeffs::AngleCoeffs::from_t2(theta * theta);
    let tb = theta * k.b;
    Matrix2::new(k.a, -tb, tb, k.a)
}

impl<T: Scalar> GroupElement<T> {
    pub fn identity(kind: GroupKind) -> Self {
        let n = kind.matrix_dim();
        Self {
            kind,
            matrix: DMatrix::identity(n, n),
        }
    }

    /// Wraps a matrix, checking only its size. Use [`GroupElement::check`] to
    /// validate the group constraints.
    pub fn from_matrix(kind: GroupKind, matrix: DMatrix<T>) -> Result<Self> {
        let n = kind.matrix_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(contract(format!(
                "{} needs a {n}x{n} matrix, got {}x{}",
                kind.name(),
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { kind, matrix })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.matrix
    }

    /// Rotation block.
    pub fn rotation(&self) -> DMatrix<T> {
        let r = self.kind.rotation_dim();
        self.matrix.view((0, 0), (r, r)).into_owned()
    }

    /// Translation (position) column for SE(2)/SE(3)/SE2(3); `None` for rotations.
    pub fn position(&self) -> Option<DVector<T>> {
        let r = self.kind.rotation_dim();
        let col = match self.kind {
            GroupKind::SO2 | GroupKind::SO3 => return None,
            GroupKind::SE2 | GroupKind::SE3 => r,
            GroupKind::SE23 => 4,
        };
        Some(self.matrix.view((0, col), (r, 1)).column(0).into_owned())
    }

    /// Velocity column of an SE2(3) element.
    pub fn velocity(&self) -> Option<DVector<T>> {
        match self.kind {
            GroupKind::SE23 => Some(self.matrix.view((0, 3), (3, 1)).column(0).into_owned()),
            _ => None,
        }
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        compose(self, other)
    }

    pub fn inverse(&self) -> Self {
        inverse(self)
    }

    pub fn log(&self) -> TangentVector<T> {
        log_map(self)
    }

    pub fn adjoint(&self) -> DMatrix<T> {
        adjoint(self)
    }

    /// Validates the group constraints within `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        let r = self.kind.rotation_dim();
        let rot = self.rotation().map(|v| v.re());
        let ortho = (&rot.transpose() * &rot - DMatrix::<f64>::identity(r, r)).amax();
        if ortho > tol {
            return Err(contract(format!(
                "{} rotation block not orthonormal (residual {ortho:.3e})",
                self.kind.name()
            )));
        }
        let det = rot.determinant();
        if (det - 1.0).abs() > tol {
            return Err(contract(format!(
                "{} rotation determinant {det} is not +1",
                self.kind.name()
            )));
        }
        let n = self.kind.matrix_dim();
        for i in r..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = self.matrix[(i, j)];
                if (got.re() - want).abs() > tol || got.imaginary().abs() > tol {
                    return Err(contract(format!(
                        "{} bottom block entry ({i},{j}) = {} breaks the group structure",
                        self.kind.name(),
                        got.re()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Group action on a point of `R^action_dim`. Poses act through homogeneous
    /// coordinates (padded with 1, or `[0, 1]` for SE2(3), so the position
    /// column is added).
    pub fn act(&self, point: &DVector<T>) -> Result<DVector<T>> {
        let n = self.kind.action_dim();
        if point.len() != n {
            return Err(contract(format!(
                "{} acts on {n}-vectors, got length {}",
                self.kind.name(),
                point.len()
            )));
        }
        let padded = homogeneous(self.kind, point);
        Ok((&self.matrix * padded).rows(0, n).into_owned())
    }

    /// Linear part of the action, i.e. the rotation block acting on difference vectors.
    pub fn action_matrix(&self) -> DMatrix<T> {
        self.rotation()
    }
}

/// Pads a point of the acted-on space to the group's matrix dimension.
pub fn homogeneous<T: Scalar>(kind: GroupKind, point: &DVector<T>) -> DVector<T> {
    let n = kind.action_dim();
    let mut padded = DVector::zeros(kind.matrix_dim());
    padded.rows_mut(0, n).copy_from(point);
    match kind {
        GroupKind::SE2 | GroupKind::SE3 => padded[n] = T::one(),
        GroupKind::SE23 => padded[4] = T::one(),
        _ => {}
    }
    padded
}

impl GroupElement<f64> {
    /// Promotes a real element to complex scalars.
    pub fn complexify(&self) -> GroupElement<nalgebra::Complex<f64>> {
        GroupElement {
            kind: self.kind,
            matrix: self.matrix.map(|v| nalgebra::Complex::new(v, 0.0)),
        }
    }

    pub fn from_rotation_translation(
        kind: GroupKind,
        rotation: &DMatrix<f64>,
        translation: &DVector<f64>,
    ) -> Result<Self> {
        let r = kind.rotation_dim();
        if !matches!(kind, GroupKind::SE2 | GroupKind::SE3) {
            return Err(contract("rotation/translation constructor needs SE(2) or SE(3)"));
        }
        if rotation.shape() != (r, r) || translation.len() != r {
            return Err(contract("rotation/translation sizes do not match the group"));
        }
        let mut m = DMatrix::identity(r + 1, r + 1);
        m.view_mut((0, 0), (r, r)).copy_from(rotation);
        m.view_mut((0, r), (r, 1)).copy_from(translation);
        Self::from_matrix(kind, m)
    }

    /// SE2(3) element from attitude, velocity and position.
    pub fn extended_pose(
        rotation: &Matrix3<f64>,
        velocity: &Vector3<f64>,
        position: &Vector3<f64>,
    ) -> Self {
        let mut m = DMatrix::identity(5, 5);
        m.view_mut((0, 0), (3, 3)).copy_from(rotation);
        m.view_mut((0, 3), (3, 1)).copy_from(velocity);
        m.view_mut((0, 4), (3, 1)).copy_from(position);
        Self {
            kind: GroupKind::SE23,
            matrix: m,
        }
    }
}

pub fn compose<T: Scalar>(a: &GroupElement<T>, b: &GroupElement<T>) -> Result<GroupElement<T>> {
    if a.kind != b.kind {
        return Err(contract(format!(
            "cannot compose {} with {}",
            a.kind.name(),
            b.kind.name()
        )));
    }
    Ok(GroupElement {
        kind: a.kind,
        matrix: &a.matrix * &b.matrix,
    })
}

pub fn inverse<T: Scalar>(x: &GroupElement<T>) -> GroupElement<T> {
    let kind = x.kind;
    let r = kind.rotation_dim();
    let n = kind.matrix_dim();
    let rot_t = x.matrix.view((0, 0), (r, r)).transpose();
    let mut m = DMatrix::identity(n, n);
    m.view_mut((0, 0), (r, r)).copy_from(&rot_t);
    for col in r..n {
        if matches!(kind, GroupKind::SO2 | GroupKind::SO3) {
            break;
        }
        let t = x.matrix.view((0, col), (r, 1));
        m.view_mut((0, col), (r, 1)).copy_from(&(-(&rot_t * t)));
    }
    GroupElement { kind, matrix: m }
}

pub fn exp_map<T: Scalar>(xi: &TangentVector<T>) -> GroupElement<T> {
    let kind = xi.kind;
    let v = &xi.coords;
    let matrix = match kind {
        GroupKind::SO2 => DMatrix::from_iterator(2, 2, so2(v[0]).iter().copied()),
        GroupKind::SE2 => {
            let rot = so2(v[0]);
            let t = se2_v(v[0]) * Vector2::new(v[1], v[2]);
            let mut m = DMatrix::identity(3, 3);
            m.view_mut((0, 0), (2, 2)).copy_from(&rot);
            m.view_mut((0, 2), (2, 1)).copy_from(&t);
            m
        }
        GroupKind::SO3 => {
            let c = so3::exp(&vec3(v, 0));
            DMatrix::from_iterator(3, 3, c.iter().copied())
        }
        GroupKind::SE3 | GroupKind::SE23 => {
            let phi = vec3(v, 0);
            let c = so3::exp(&phi);
            let j = so3::left_jacobian(&phi);
            let n = kind.matrix_dim();
            let mut m = DMatrix::identity(n, n);
            m.view_mut((0, 0), (3, 3)).copy_from(&c);
            for (block, col) in (3..kind.dof()).step_by(3).zip(3..n) {
                m.view_mut((0, col), (3, 1)).copy_from(&(j * vec3(v, block)));
            }
            m
        }
    };
    GroupElement { kind, matrix }
}

pub fn log_map<T: Scalar>(x: &GroupElement<T>) -> TangentVector<T> {
    let kind = x.kind;
    let m = &x.matrix;
    let coords = match kind {
        GroupKind::SO2 => DVector::from_element(1, T::atan2(m[(1, 0)], m[(0, 0)])),
        GroupKind::SE2 => {
            let theta = T::atan2(m[(1, 0)], m[(0, 0)]);
            let vinv = se2_v(theta)
                .try_inverse()
                .unwrap_or_else(Matrix2::identity);
            let rho = vinv * Vector2::new(m[(0, 2)], m[(1, 2)]);
            DVector::from_vec(vec![theta, rho[0], rho[1]])
        }
        GroupKind::SO3 => {
            let phi = so3::log(&rot3(m));
            DVector::from_iterator(3, phi.iter().copied())
        }
        GroupKind::SE3 | GroupKind::SE23 => {
            let phi = so3::log(&rot3(m));
            let jinv = so3::left_jacobian_inv(&phi);
            let mut out = DVector::zeros(kind.dof());
            out.rows_mut(0, 3).copy_from(&phi);
            for (block, col) in (3..kind.dof()).step_by(3).zip(3..kind.matrix_dim()) {
                out.rows_mut(block, 3).copy_from(&(jinv * col3(m, col)));
            }
            out
        }
    };
    TangentVector { kind, coords }
}

pub fn wedge<T: Scalar>(xi: &TangentVector<T>) -> DMatrix<T> {
    let kind = xi.kind;
    let v = &xi.coords;
    let n = kind.matrix_dim();
    let mut m = DMatrix::zeros(n, n);
    match kind {
        GroupKind::SO2 | GroupKind::SE2 => {
            m[(0, 1)] = -v[0];
            m[(1, 0)] = v[0];
            if kind == GroupKind::SE2 {
                m[(0, 2)] = v[1];
                m[(1, 2)] = v[2];
            }
        }
        GroupKind::SO3 | GroupKind::SE3 | GroupKind::SE23 => {
            m.view_mut((0, 0), (3, 3))
                .copy_from(&so3::skew(&vec3(v, 0)));
            for (block, col) in (3..kind.dof()).step_by(3).zip(3..n) {
                m.view_mut((0, col), (3, 1)).copy_from(&vec3(v, block));
            }
        }
    }
    m
}

/// Inverse of [`wedge`]. Fails when the matrix is not in the Lie algebra
/// (residual above 1e-9).
pub fn vee<T: Scalar>(kind: GroupKind, m: &DMatrix<T>) -> Result<TangentVector<T>> {
    let n = kind.matrix_dim();
    if m.nrows() != n || m.ncols() != n {
        return Err(contract(format!(
            "{} algebra element must be {n}x{n}",
            kind.name()
        )));
    }
    let coords = match kind {
        GroupKind::SO2 => DVector::from_element(1, m[(1, 0)]),
        GroupKind::SE2 => DVector::from_vec(vec![m[(1, 0)], m[(0, 2)], m[(1, 2)]]),
        GroupKind::SO3 | GroupKind::SE3 | GroupKind::SE23 => {
            let phi = so3::unskew(&rot3(m));
            let mut out = DVector::zeros(kind.dof());
            out.rows_mut(0, 3).copy_from(&phi);
            for (block, col) in (3..kind.dof()).step_by(3).zip(3..n) {
                out.rows_mut(block, 3).copy_from(&col3(m, col));
            }
            out
        }
    };
    let xi = TangentVector { kind, coords };
    let residual = (wedge(&xi) - m).map(|v| v.magnitude()).max();
    if residual > 1e-9 {
        return Err(contract(format!(
            "matrix is not in the {} Lie algebra (residual {residual:.3e})",
            kind.name()
        )));
    }
    Ok(xi)
}

pub fn adjoint<T: Scalar>(x: &GroupElement<T>) -> DMatrix<T> {
    let kind = x.kind;
    let m = &x.matrix;
    match kind {
        GroupKind::SO2 => DMatrix::identity(1, 1),
        GroupKind::SE2 => {
            let mut ad = DMatrix::zeros(3, 3);
            ad[(0, 0)] = T::one();
            ad[(1, 0)] = m[(1, 2)];
            ad[(2, 0)] = -m[(0, 2)];
            ad.view_mut((1, 1), (2, 2))
                .copy_from(&m.view((0, 0), (2, 2)));
            ad
        }
        GroupKind::SO3 => m.clone(),
        GroupKind::SE3 | GroupKind::SE23 => {
            let c = rot3(m);
            let dof = kind.dof();
            let mut ad = DMatrix::zeros(dof, dof);
            for (block, col) in (0..dof).step_by(3).zip(2..) {
                ad.view_mut((block, block), (3, 3)).copy_from(&c);
                if block > 0 {
                    let t = so3::skew(&col3(m, col));
                    ad.view_mut((block, 0), (3, 3)).copy_from(&(t * c));
                }
            }
            ad
        }
    }
}

/// Derivative of the action `X . b` with respect to a perturbation of `X`
/// on the given side. Returns an `action_dim x dof` matrix.
pub fn action_jacobian(x: &GroupElement<f64>, point: &DVector<f64>, side: Side) -> Result<DMatrix<f64>> {
    let kind = x.kind();
    let n = kind.action_dim();
    if point.len() != n {
        return Err(contract(format!("{} acts on {n}-vectors", kind.name())));
    }
    let bar = homogeneous(kind, point);
    let moved = x.matrix() * &bar;
    let mut out = DMatrix::zeros(n, kind.dof());
    for i in 0..kind.dof() {
        let e = wedge(&TangentVector { kind, coords: DVector::from_fn(kind.dof(), |j, _| if i == j { 1.0 } else { 0.0 }) });
        let col = match side {
            Side::Right => x.matrix() * (e * &bar),
            Side::Left => e * &moved,
        };
        out.column_mut(i).copy_from(&col.rows(0, n));
    }
    Ok(out)
}

/// Matrix of the linear map `xi -> vee(M xi^ M^-1)` for an invertible `M` whose
/// conjugation preserves the Lie algebra (group elements, or the gravity and
/// input factors of the discrete IMU model).
pub fn conjugation_matrix(kind: GroupKind, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let minv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("conjugating matrix is singular".into()))?;
    let dof = kind.dof();
    let mut out = DMatrix::zeros(dof, dof);
    for i in 0..dof {
        let e = wedge(&TangentVector { kind, coords: DVector::from_fn(dof, |j, _| if i == j { 1.0 } else { 0.0 }) });
        let c = vee(kind, &(m * e * &minv))?;
        out.column_mut(i).copy_from(&c.coords);
    }
    Ok(out)
}

/// Closed-form left or right Jacobian of the exponential map.
/// `J_right(xi) == J_left(-xi)`.
pub fn group_jacobian<T: Scalar>(xi: &TangentVector<T>, side: Side) -> DMatrix<T> {
    let coords = match side {
        Side::Left => xi.coords.clone(),
        Side::Right => -xi.coords.clone(),
    };
    left_jacobian(xi.kind, &coords)
}

/// Inverse of [`group_jacobian`].
pub fn group_jacobian_inv<T: Scalar>(xi: &TangentVector<T>, side: Side) -> DMatrix<T> {
    let coords = match side {
        Side::Left => xi.coords.clone(),
        Side::Right => -xi.coords.clone(),
    };
    let kind = xi.kind;
    match kind {
        GroupKind::SO2 => DMatrix::identity(1, 1),
        GroupKind::SO3 => {
            let j = so3::left_jacobian_inv(&vec3(&coords, 0));
            DMatrix::from_iterator(3, 3, j.iter().copied())
        }
        GroupKind::SE3 | GroupKind::SE23 => {
            // Block lower-triangular: [[J, 0], [Q, J]]^-1 = [[J^-1, 0], [-J^-1 Q J^-1, J^-1]].
            let phi = vec3(&coords, 0);
            let jinv = so3::left_jacobian_inv(&phi);
            let dof = kind.dof();
            let mut out = DMatrix::zeros(dof, dof);
            for block in (0..dof).step_by(3) {
                out.view_mut((block, block), (3, 3)).copy_from(&jinv);
                if block > 0 {
                    let q = so3::q_block(&phi, &vec3(&coords, block));
                    out.view_mut((block, 0), (3, 3))
                        .copy_from(&(-(jinv * q * jinv)));
                }
            }
            out
        }
        GroupKind::SE2 => {
            let j = left_jacobian(kind, &coords);
            // Lower-triangular with a unit (0,0) entry and an invertible 2x2 block.
            let block: Matrix2<T> = j.fixed_view::<2, 2>(1, 1).into_owned();
            let binv = block.try_inverse().unwrap_or_else(Matrix2::identity);
            let low = j.fixed_view::<2, 1>(1, 0).into_owned();
            let mut out = DMatrix::identity(3, 3);
            out.view_mut((1, 1), (2, 2)).copy_from(&binv);
            out.view_mut((1, 0), (2, 1)).copy_from(&(-(binv * low)));
            out
        }
    }
}

fn left_jacobian<T: Scalar>(kind: GroupKind, v: &DVector<T>) -> DMatrix<T> {
    match kind {
        GroupKind::SO2 => DMatrix::identity(1, 1),
        GroupKind::SE2 => {
            let theta = v[0];
            let k = coeffs::AngleCoeffs::from_t2(theta * theta);
            let (r1, r2) = (v[1], v[2]);
            let tc = theta * k.c;
            let tb = theta * k.b;
            let mut j = DMatrix::zeros(3, 3);
            j[(0, 0)] = T::one();
            j[(1, 0)] = r1 * tc + r2 * k.b;
            j[(2, 0)] = -r1 * k.b + r2 * tc;
            j[(1, 1)] = k.a;
            j[(1, 2)] = -tb;
            j[(2, 1)] = tb;
            j[(2, 2)] = k.a;
            j
        }
        GroupKind::SO3 => {
            let j = so3::left_jacobian(&vec3(v, 0));
            DMatrix::from_iterator(3, 3, j.iter().copied())
        }
        GroupKind::SE3 | GroupKind::SE23 => {
            let phi = vec3(v, 0);
            let jl = so3::left_jacobian(&phi);
            let dof = kind.dof();
            let mut out = DMatrix::zeros(dof, dof);
            for block in (0..dof).step_by(3) {
                out.view_mut((block, block), (3, 3)).copy_from(&jl);
                if block > 0 {
                    out.view_mut((block, 0), (3, 3))
                        .copy_from(&so3::q_block(&phi, &vec3(v, block)));
                }
            }
            out
        }
    }
}
