//! The data matrix of the translation-eliminated least-squares objective.
//!
//! For fixed rotations the translations have a closed-form optimum, and
//! substituting it back leaves `min tr(R^T Omega R)` over `R in SO(d)^n` with
//!
//! ```text
//! Omega = 2n I - 2 S + Sigma_hat - (1 / 2n) T_hat T_hat^T
//! ```

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::scalar::{cast, Scalar};
use crate::synthesis::ObservationSet;

/// `Omega` together with the ingredients `T_hat` and `Sigma_hat`.
#[derive(Debug, Clone)]
pub struct DataMatrix<T: Scalar> {
    pub n: usize,
    pub d: usize,
    /// Symmetric `nd x nd`.
    pub omega: DMatrix<T>,
    /// `nd x n`.
    pub t_hat: DMatrix<T>,
    /// Block-diagonal `nd x nd`.
    pub sigma_hat: DMatrix<T>,
}

/// `T_hat = BlkDiag(sum_j s_1j, .., sum_j s_nj) - s`.
pub fn build_t_hat<T: Scalar>(obs: &ObservationSet<T>) -> DMatrix<T> {
    let (n, d) = (obs.n(), obs.d());
    let s = obs.translation_matrix();
    let mut t_hat = -s;
    for i in 0..n {
        let row_sum = s.rows(i * d, d).column_sum();
        let mut block = t_hat.view_mut((i * d, i), (d, 1));
        block += row_sum;
    }
    t_hat
}

/// `Sigma_hat = BlkDiag(sum_j s_1j s_1j^T, .., sum_j s_nj s_nj^T)`.
pub fn build_sigma_hat<T: Scalar>(obs: &ObservationSet<T>) -> DMatrix<T> {
    let (n, d) = (obs.n(), obs.d());
    let s = obs.translation_matrix();
    let mut sigma = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        let rows = s.rows(i * d, d);
        sigma.view_mut((i * d, i * d), (d, d)).copy_from(&(&rows * rows.transpose()));
    }
    sigma
}

/// Assembles `Omega` and symmetrizes it as `(Omega + Omega^T) / 2`.
///
/// Only the symmetric part of `S` enters the quadratic form, so the
/// symmetrization does not change the objective.
pub fn build_omega<T: Scalar>(obs: &ObservationSet<T>) -> DataMatrix<T> {
    let (n, d) = (obs.n(), obs.d());
    let t_hat = build_t_hat(obs);
    let sigma_hat = build_sigma_hat(obs);
    let mut omega = rotation_only_matrix(obs);
    omega += &sigma_hat;
    omega.gemm(-T::one() / cast::<T>(2.0 * n as f64), &t_hat, &t_hat.transpose(), T::one());
    symmetrize(&mut omega);
    DataMatrix { n, d, omega, t_hat, sigma_hat }
}

/// `2n I - (S + S^T)`: the part of `Omega` built from rotation comparisons only.
pub fn rotation_only_matrix<T: Scalar>(obs: &ObservationSet<T>) -> DMatrix<T> {
    let nd = obs.n() * obs.d();
    let s = obs.rotation_matrix();
    let mut m = DMatrix::identity(nd, nd) * cast::<T>(2.0 * obs.n() as f64);
    m -= s;
    m -= s.transpose();
    m
}

pub(crate) fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let half = cast::<T>(0.5);
    let dim = m.nrows();
    for i in 0..dim {
        for j in (i + 1)..dim {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

impl<T: Scalar> DataMatrix<T> {
    /// Plain-text dump of `Omega`: a `nd nd` header, then one space-separated row per line.
    pub fn write_omega<W: Write>(&self, mut w: W) -> Result<()> {
        let nd = self.omega.nrows();
        writeln!(w, "{nd} {nd}")?;
        for i in 0..nd {
            let row: Vec<String> = self.omega.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}
