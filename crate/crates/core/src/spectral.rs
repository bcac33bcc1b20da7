//! Extreme eigenvectors of the data matrix, normalized so `Phi^T Phi = n I_d`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// The `d` eigenvectors of smallest eigenvalue, stacked as `nd x d` blocks.
#[derive(Debug, Clone)]
pub struct SpectralBasis<T: Scalar> {
    pub n: usize,
    pub d: usize,
    /// `Phi`, with `Phi^T Phi = n I_d`.
    pub phi: DMatrix<T>,
    /// Ascending.
    pub eigenvalues: Vec<T>,
    /// Gap `lambda_{d+1} - lambda_d` when it is below `1e-10 |Omega|_F`.
    pub degenerate_gap: Option<T>,
}

impl<T: Scalar> SpectralBasis<T> {
    /// Block `Phi_i`.
    pub fn block(&self, i: usize) -> DMatrix<T> {
        self.phi.rows(i * self.d, self.d).into_owned()
    }
}

/// Computes the `k = d` eigenvectors of `omega` with smallest eigenvalues.
///
/// Columns are ordered by ascending eigenvalue, scaled to squared norm `n`,
/// and sign-canonicalized so the largest-magnitude entry of each column is
/// positive (first such entry on ties).
pub fn smallest_eigvecs<T: Scalar>(omega: &DMatrix<T>, d: usize) -> Result<SpectralBasis<T>> {
    let nd = omega.nrows();
    if omega.ncols() != nd {
        return Err(Error::DimensionMismatch { expected: nd, got: omega.ncols() });
    }
    if d == 0 || nd % d != 0 {
        return Err(Error::InvalidInput(format!("matrix order {nd} is not a multiple of d = {d}")));
    }
    if omega.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("data matrix has non-finite entries".into()));
    }
    let n = nd / d;
    let (values, vectors) = T::symmetric_eigen(omega)?;
    let scale = cast::<T>(n as f64).sqrt();
    let mut phi = vectors.columns(0, d).into_owned();
    for mut col in phi.column_iter_mut() {
        let norm = col.norm();
        if !(norm > T::zero()) {
            return Err(Error::EigenSolver("zero eigenvector returned".into()));
        }
        let mut pivot = 0;
        for (r, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if col[pivot] < T::zero() { -T::one() } else { T::one() };
        col *= sign * scale / norm;
    }
    let degenerate_gap = (nd > d)
        .then(|| values[d] - values[d - 1])
        .filter(|&gap| gap < cast::<T>(1e-10) * omega.norm());
    Ok(SpectralBasis { n, d, phi, eigenvalues: values[..d].to_vec(), degenerate_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_matrix::build_omega;
    use crate::geometry::{random_rotation, stack_rotations, Rotation};
    use crate::synthesis::{generate_ground_truth, synthesize_observations, GroundTruth, MirrorMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn noisy_omega(n: usize, seed: u64) -> DMatrix<f64> {
        let gt: GroundTruth<f64> = generate_ground_truth(n, 3, 1.0, &mut rng(seed)).unwrap();
        let obs = synthesize_observations(&gt, 0.7, 0.5, &mut rng(seed + 1), MirrorMode::Mirrored).unwrap();
        build_omega(&obs).omega
    }

    /// Cosines of the principal angles between the column spans of two
    /// `nd x d` matrices with `X^T X = n I`.
    fn principal_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>, n: f64) -> Vec<f64> {
        (a.transpose() * b / n).singular_values().iter().copied().collect()
    }

    #[test]
    fn identity_ground_truth_basis() {
        let (n, d) = (3usize, 2usize);
        let ones = DMatrix::from_element(n, n, 1.0);
        let omega = DMatrix::identity(n * d, n * d) * (2.0 * n as f64) - ones.kronecker(&DMatrix::identity(d, d)) * 2.0;
        let basis = smallest_eigvecs(&omega, d).unwrap();
        for v in &basis.eigenvalues {
            assert!(v.abs() < 1e-10);
        }
        let ids = stack_rotations(&vec![Rotation::<f64>::identity(d); n]);
        for c in principal_cosines(&basis.phi, &ids, n as f64) {
            assert!((c - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_basis_spans_true_rotations() {
        let n = 20;
        let gt: GroundTruth<f64> = generate_ground_truth(n, 3, 1.0, &mut rng(3)).unwrap();
        let obs = synthesize_observations(&gt, 0.0, 0.0, &mut rng(4), MirrorMode::Mirrored).unwrap();
        let basis = smallest_eigvecs(&build_omega(&obs).omega, 3).unwrap();
        assert!(basis.eigenvalues.iter().all(|v| *v <= 1e-8));
        for c in principal_cosines(&basis.phi, &gt.stacked_rotations(), n as f64) {
            // cos(1e-6) = 1 - 5e-13
            assert!(c >= (1e-6f64).cos() - 1e-12, "cosine {c}");
        }
    }

    #[test]
    fn normalization_and_residuals() {
        for seed in 0..5 {
            let n = 15;
            let omega = noisy_omega(n, seed);
            let basis = smallest_eigvecs(&omega, 3).unwrap();
            let gram = basis.phi.transpose() * &basis.phi;
            assert!((gram - DMatrix::identity(3, 3) * n as f64).norm() < 1e-8);
            assert!(basis.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
            let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(basis.eigenvalues.clone()));
            let residual = &omega * &basis.phi - &basis.phi * lambda;
            assert!(residual.norm() <= 1e-6 * omega.norm());
            for (k, lam) in basis.eigenvalues.iter().enumerate() {
                let col = basis.phi.column(k);
                let r = (&omega * col - col * *lam).norm();
                assert!(r <= 1e-7 * (omega.norm() + lam.abs()) * (n as f64).sqrt());
            }
            assert!(basis.degenerate_gap.is_none());
        }
    }

    #[test]
    fn rayleigh_optimality() {
        let n = 12;
        let omega = noisy_omega(n, 21);
        let basis = smallest_eigvecs(&omega, 3).unwrap();
        let objective = |x: &DMatrix<f64>| (x.transpose() * &omega * x).trace() / n as f64;
        let best = objective(&basis.phi);
        let mut r = rng(22);
        for _ in 0..1000 {
            let g = DMatrix::from_fn(3 * n, 3, |_, _| r.sample::<f64, _>(StandardNormal));
            let q = g.qr().q() * (n as f64).sqrt();
            assert!(objective(&q) >= best - 1e-8);
        }
    }

    #[test]
    fn positive_scaling_preserves_basis() {
        let omega = noisy_omega(10, 31);
        let a = smallest_eigvecs(&omega, 3).unwrap();
        let b = smallest_eigvecs(&(&omega * 3.5), 3).unwrap();
        assert!((&a.phi - &b.phi).norm() < 1e-8);
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((x * 3.5 - y).abs() < 1e-8);
        }
    }

    #[test]
    fn canonical_signs() {
        let basis = smallest_eigvecs(&noisy_omega(8, 41), 3).unwrap();
        for col in basis.phi.column_iter() {
            let max = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let first = col.iter().find(|v| v.abs() == max).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn flags_degenerate_spectrum() {
        // Identity matrix: every eigenvalue ties.
        let basis = smallest_eigvecs(&DMatrix::<f64>::identity(6, 6), 2).unwrap();
        assert!(basis.degenerate_gap.is_some());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(smallest_eigvecs(&DMatrix::<f64>::identity(5, 5), 2).is_err());
        assert!(smallest_eigvecs(&DMatrix::<f64>::zeros(4, 3), 2).is_err());
        let mut m = DMatrix::<f64>::identity(4, 4);
        m[(0, 1)] = f64::INFINITY;
        assert!(smallest_eigvecs(&m, 2).is_err());
    }

    #[test]
    fn single_precision_basis() {
        let mut r = rng(51);
        let rots: Vec<Rotation<f32>> = (0..6).map(|_| random_rotation(&mut r, 3).unwrap()).collect();
        let gt = GroundTruth::new(rots, vec![nalgebra::DVector::zeros(3); 6]).unwrap();
        let obs = synthesize_observations(&gt, 0.0, 0.0, &mut r, MirrorMode::Mirrored).unwrap();
        let basis = smallest_eigvecs(&build_omega(&obs).omega, 3).unwrap();
        let gram = basis.phi.transpose() * &basis.phi;
        assert!((gram - DMatrix::identity(3, 3) * 6.0f32).norm() < 1e-3);
    }
}
