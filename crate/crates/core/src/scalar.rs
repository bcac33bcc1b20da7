//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::{DMatrix, RealField};
use num_traits::{FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point scalar the synchronization machinery is generic over.
///
/// Implemented for `f32` and `f64`. Besides the arithmetic bounds, each
/// implementation supplies the dense symmetric eigensolver kernel and the
/// tolerance used to validate rotation invariants at that precision.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + std::fmt::Display + Send + Sync + 'static
{
    /// Frobenius tolerance for `M^T M = I` and `det(M) = 1`.
    fn orthogonality_tol() -> Self;

    /// Full eigendecomposition of a symmetric matrix.
    ///
    /// Returns eigenvalues in ascending order and the matching orthonormal
    /// eigenvectors as columns.
    fn symmetric_eigen(m: &DMatrix<Self>) -> Result<(Vec<Self>, DMatrix<Self>)>;
}

macro_rules! impl_scalar {
    ($t:ty, $tol:expr) => {
        impl Scalar for $t {
            fn orthogonality_tol() -> Self {
                $tol
            }

            fn symmetric_eigen(m: &DMatrix<Self>) -> Result<(Vec<Self>, DMatrix<Self>)> {
                let dim = m.nrows();
                let mat = faer::Mat::<$t>::from_fn(dim, dim, |i, j| m[(i, j)]);
                let evd = mat
                    .self_adjoint_eigen(faer::Side::Lower)
                    .map_err(|e| Error::EigenSolver(format!("{e:?}")))?;
                let values = evd.S().column_vector();
                let vectors = evd.U();
                let mut order: Vec<usize> = (0..dim).collect();
                order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
                let eigenvalues = order.iter().map(|&k| values[k]).collect();
                let eigenvectors = DMatrix::from_fn(dim, dim, |i, j| vectors[(i, order[j])]);
                Ok((eigenvalues, eigenvectors))
            }
        }
    };
}

impl_scalar!(f64, 1e-10);
impl_scalar!(f32, 1e-4);

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Lossless widening to `f64` for reporting.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
