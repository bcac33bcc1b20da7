//! Rotation and rigid-motion primitives.
//!
//! A rigid motion `G = (R, t)` is represented, as throughout this crate, by
//! the homogeneous matrix
//!
//! ```text
//! [ R^T  t ]
//! [ 0    1 ]
//! ```
//!
//! so it acts on a point as `x -> R^T x + t`. Relative motions `G_i^{-1} G_j`
//! then have top-left block `R_i R_j^T` and translation `R_i (t_j - t_i)`,
//! which are exactly the noiseless observation blocks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// A proper rotation of `R^d`, stored as a dense `d x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation<T: Scalar> {
    mat: DMatrix<T>,
}

impl<T: Scalar> Rotation<T> {
    /// Validates `M^T M = I` and `det M = 1` at the scalar's tolerance.
    pub fn new(mat: DMatrix<T>) -> Result<Self> {
        check_square(&mat)?;
        let d = mat.nrows();
        let tol = T::orthogonality_tol();
        let gram_err = (mat.transpose() * &mat - DMatrix::identity(d, d)).norm();
        if gram_err > tol {
            return Err(Error::InvalidInput(format!(
                "matrix is not orthogonal (|M^T M - I|_F = {gram_err})"
            )));
        }
        let det = mat.determinant();
        if (det - T::one()).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "matrix is not a proper rotation (det = {det})"
            )));
        }
        Ok(Self { mat })
    }

    /// Wraps a matrix the caller already knows to be in SO(d).
    pub(crate) fn from_matrix_unchecked(mat: DMatrix<T>) -> Self {
        Self { mat }
    }

    pub fn identity(d: usize) -> Self {
        Self { mat: DMatrix::identity(d, d) }
    }

    /// Planar rotation by `angle` radians.
    pub fn planar(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self { mat: DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) }
    }

    /// Rotation of `R^3` by `angle` radians about `axis` (Rodrigues).
    pub fn axis_angle(axis: &DVector<T>, angle: T) -> Result<Self> {
        if axis.len() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: axis.len() });
        }
        let norm = axis.norm();
        if !(norm > T::zero()) {
            return Err(Error::InvalidInput("rotation axis has zero length".into()));
        }
        let k = axis / norm;
        let cross = DMatrix::from_row_slice(
            3,
            3,
            &[T::zero(), -k[2], k[1], k[2], T::zero(), -k[0], -k[1], k[0], T::zero()],
        );
        let (s, c) = angle.sin_cos();
        let mat = DMatrix::identity(3, 3) + &cross * s + &cross * &cross * (T::one() - c);
        Ok(Self { mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.mat
    }

    pub fn transpose(&self) -> Self {
        Self { mat: self.mat.transpose() }
    }

    /// Matrix product `self * other`.
    pub fn mul(&self, other: &Rotation<T>) -> Self {
        Self { mat: &self.mat * &other.mat }
    }
}

/// A rigid motion: rotation `R` and translation `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidMotion<T: Scalar> {
    pub rotation: Rotation<T>,
    pub translation: DVector<T>,
}

impl<T: Scalar> RigidMotion<T> {
    pub fn new(rotation: Rotation<T>, translation: DVector<T>) -> Result<Self> {
        if translation.len() != rotation.dim() {
            return Err(Error::DimensionMismatch {
                expected: rotation.dim(),
                got: translation.len(),
            });
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity(d: usize) -> Self {
        Self { rotation: Rotation::identity(d), translation: DVector::zeros(d) }
    }

    pub fn dim(&self) -> usize {
        self.rotation.dim()
    }

    /// The top-left block of the homogeneous form, `R^T`.
    pub fn rotation_block(&self) -> DMatrix<T> {
        self.rotation.matrix().transpose()
    }

    /// `(d+1) x (d+1)` homogeneous matrix `[[R^T, t], [0, 1]]`.
    pub fn homogeneous(&self) -> DMatrix<T> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d + 1, d + 1);
        h.view_mut((0, 0), (d, d)).copy_from(&self.rotation_block());
        h.view_mut((0, d), (d, 1)).copy_from(&self.translation);
        h[(d, d)] = T::one();
        h
    }

    /// Inverse of [`RigidMotion::homogeneous`]. The top-left block must be in SO(d).
    pub fn from_homogeneous(h: &DMatrix<T>) -> Result<Self> {
        check_square(h)?;
        let d = h.nrows() - 1;
        let block = h.view((0, 0), (d, d)).transpose();
        let rotation = Rotation::new(block)?;
        Ok(Self { rotation, translation: h.view((0, d), (d, 1)).column(0).into_owned() })
    }

    /// Applies the motion to a point: `R^T x + t`.
    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        self.rotation.matrix().tr_mul(x) + &self.translation
    }

    /// Group product `self * other` (apply `other` first).
    pub fn compose(&self, other: &RigidMotion<T>) -> Result<Self> {
        check_same_dim(self.dim(), other.dim())?;
        Ok(Self {
            rotation: other.rotation.mul(&self.rotation),
            translation: self.rotation.matrix().tr_mul(&other.translation) + &self.translation,
        })
    }

    pub fn invert(&self) -> Self {
        Self {
            rotation: self.rotation.transpose(),
            translation: -(self.rotation.matrix() * &self.translation),
        }
    }

    /// The comparison `self^{-1} * other`.
    ///
    /// Its homogeneous top-left block is `R_i R_j^T` and its translation is
    /// `R_i (t_j - t_i)`.
    pub fn relative(&self, other: &RigidMotion<T>) -> Result<Self> {
        check_same_dim(self.dim(), other.dim())?;
        let r_i = self.rotation.matrix();
        Ok(Self {
            rotation: other.rotation.mul(&self.rotation.transpose()),
            translation: r_i * (&other.translation - &self.translation),
        })
    }
}

/// Free-function form of [`RigidMotion::compose`].
pub fn compose<T: Scalar>(g1: &RigidMotion<T>, g2: &RigidMotion<T>) -> Result<RigidMotion<T>> {
    g1.compose(g2)
}

/// Free-function form of [`RigidMotion::invert`].
pub fn invert<T: Scalar>(g: &RigidMotion<T>) -> RigidMotion<T> {
    g.invert()
}

/// Free-function form of [`RigidMotion::relative`]: `G_i^{-1} G_j`.
pub fn relative<T: Scalar>(g_i: &RigidMotion<T>, g_j: &RigidMotion<T>) -> Result<RigidMotion<T>> {
    g_i.relative(g_j)
}

/// Result of projecting onto SO(d), with the degeneracy flag.
#[derive(Debug, Clone)]
pub struct Projection<T: Scalar> {
    pub rotation: Rotation<T>,
    /// The two smallest singular values tie while `det(UV^T) < 0`, so the
    /// nearest rotation is not unique.
    pub degenerate: bool,
}

/// Nearest rotation in Frobenius norm, reporting degenerate inputs.
///
/// With `M = U S V^T` (singular values descending) the result is
/// `U diag(1, .., 1, det(UV^T)) V^T`.
pub fn project_so_checked<T: Scalar>(m: &DMatrix<T>) -> Result<Projection<T>> {
    check_square(m)?;
    let d = m.nrows();
    if d < 2 {
        return Err(Error::InvalidInput(format!("dimension must be at least 2, got {d}")));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let svd = m.clone().svd(true, true);
    let mut u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = svd.singular_values;
    let reflect = (&u * &v_t).determinant() < T::zero();
    if reflect {
        let mut last = u.column_mut(d - 1);
        last.neg_mut();
    }
    let scale = sv[0].max(T::one());
    let degenerate = reflect && (sv[d - 2] - sv[d - 1]).abs() <= T::orthogonality_tol() * scale;
    Ok(Projection { rotation: Rotation::from_matrix_unchecked(u * v_t), degenerate })
}

/// Nearest rotation in Frobenius norm (`Pi_SO(d)`).
pub fn project_so<T: Scalar>(m: &DMatrix<T>) -> Result<Rotation<T>> {
    project_so_checked(m).map(|p| p.rotation)
}

/// Block-wise projection of an `nd x d` matrix onto `SO(d)^n`.
pub fn project_so_blockwise<T: Scalar>(y: &DMatrix<T>) -> Result<Vec<Rotation<T>>> {
    let d = y.ncols();
    if d == 0 || y.nrows() % d != 0 {
        return Err(Error::InvalidInput(format!(
            "expected an nd x d matrix, got {} x {}",
            y.nrows(),
            d
        )));
    }
    (0..y.nrows() / d)
        .map(|i| project_so(&y.rows(i * d, d).into_owned()))
        .collect()
}

/// Stacks rotations vertically into the `nd x d` block column `[R_1; ..; R_n]`.
pub fn stack_rotations<T: Scalar>(rotations: &[Rotation<T>]) -> DMatrix<T> {
    let d = rotations.first().map_or(0, Rotation::dim);
    let mut out = DMatrix::zeros(rotations.len() * d, d);
    for (i, r) in rotations.iter().enumerate() {
        out.rows_mut(i * d, d).copy_from(r.matrix());
    }
    out
}

/// Haar-distributed rotation from the QR decomposition of a Gaussian matrix.
pub fn random_rotation<T: Scalar, R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<Rotation<T>> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("dimension must be at least 2, got {d}")));
    }
    let g = DMatrix::from_fn(d, d, |_, _| cast::<T>(rng.sample::<f64, _>(StandardNormal)));
    let (mut q, r) = g.qr().unpack();
    for j in 0..d {
        if r[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < T::zero() {
        q.column_mut(0).neg_mut();
    }
    Ok(Rotation::from_matrix_unchecked(q))
}

/// Geodesic distance between two rotations, in degrees.
///
/// For `d <= 3` this is `arccos((tr(R1^T R2) - (d - 2)) / 2)`. For larger `d`
/// it is `|log(R1^T R2)|_F / sqrt(2)`, computed from the principal angles.
pub fn geodesic_angle_deg<T: Scalar>(r1: &Rotation<T>, r2: &Rotation<T>) -> Result<T> {
    check_same_dim(r1.dim(), r2.dim())?;
    let d = r1.dim();
    let deg = cast::<T>(180.0) / T::pi();
    let one = T::one();
    if d <= 3 {
        // One rotation plane: |R1 - R2|_F = sqrt(8) sin(theta / 2). Unlike
        // acos of the trace this stays accurate for small angles.
        let chord = (r1.matrix() - r2.matrix()).norm() / cast::<T>(8.0).sqrt();
        return Ok(cast::<T>(2.0) * chord.min(one).asin() * deg);
    }
    Ok(principal_angle_norm(&r1.matrix().tr_mul(r2.matrix())) * deg)
}

/// `|log(Q)|_F / sqrt(2)` for an orthogonal `Q`.
///
/// The symmetric part of `Q` has eigenvalues `cos(theta_k)` (each rotation
/// plane contributing twice), and `|log Q|_F^2 = 2 sum_k theta_k^2`.
pub(crate) fn principal_angle_norm<T: Scalar>(q: &DMatrix<T>) -> T {
    let sym = (q + q.transpose()) * cast::<T>(0.5);
    let one = T::one();
    let sum_sq = sym
        .symmetric_eigenvalues()
        .iter()
        .map(|&c| {
            let a = c.clamp(-one, one).acos();
            a * a
        })
        .fold(T::zero(), |acc, x| acc + x);
    (sum_sq / cast(2.0)).sqrt()
}

fn check_square<T: Scalar>(m: &DMatrix<T>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    Ok(())
}

pub(crate) fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    Ok(())
}
