//! Ground-truth/noise decomposition of the data matrix and numerical checks
//! of its algebraic identities and deterministic norm bounds.
//!
//! With `s*_ij`, `w^t_ij`, `W^R_ij` the clean comparisons and the noise:
//!
//! ```text
//! T*   = BlkDiag(sum_j s*_ij) - s*          Sigma* = BlkDiag(sum_j s*_ij s*_ij^T)
//! E    = BlkDiag(sum_j w^t_ij) - w^t
//! Delta = BlkDiag(sum_{j != i} s* w^T + w s*^T + w w^T - sigma2^2 I)
//!         - (1/2n)(E T*^T + T* E^T + E E^T) - 2 W^R
//! H    = Omega - sigma2^2 (n - 1) I
//!      = 2n I - 2 R* R*^T + BR (Xi* - Upsilon*) BR^T + Delta
//! ```
//!
//! Probabilistic bounds carry unknown constants and are only logged next to
//! their rates; the deterministic ones are checked pass/fail.

use std::io::Write;

use nalgebra::DMatrix;

use crate::data_matrix::build_omega;
use crate::error::{Error, Result};
use crate::scalar::{cast, to_f64, Scalar};
use crate::synthesis::{GroundTruth, MirrorMode, ObservationSet};

#[derive(Debug, Clone)]
pub struct GroundTruthDecomposition<T: Scalar> {
    pub n: usize,
    pub d: usize,
    pub sigma2: T,
    /// `T*`, `nd x n`.
    pub t_star: DMatrix<T>,
    /// `T*_D = BlkDiag(sum_j s*_ij)`, `nd x n`.
    pub t_star_diag: DMatrix<T>,
    /// `s*`, `nd x n`.
    pub s_star: DMatrix<T>,
    pub sigma_star: DMatrix<T>,
    pub xi_star: DMatrix<T>,
    pub upsilon_star: DMatrix<T>,
    /// `E`, `nd x n`.
    pub e_noise: DMatrix<T>,
    /// `E_D = BlkDiag(sum_j w^t_ij)`, `nd x n`.
    pub e_diag: DMatrix<T>,
    /// `w^t`, `nd x n`.
    pub w_t: DMatrix<T>,
    /// `W^R`, `nd x nd`, zero diagonal blocks.
    pub w_r: DMatrix<T>,
    pub delta: DMatrix<T>,
    pub h: DMatrix<T>,
    /// `BR = BlkDiag(R*_1, .., R*_n)`.
    pub block_rotations: DMatrix<T>,
    /// `R* = [R*_1; ..; R*_n]`.
    pub stacked_rotations: DMatrix<T>,
    /// `L = n I_n - J_n`.
    pub laplacian: DMatrix<T>,
}

/// `BlkDiag(t_1, .., t_n)` as an `nd x n` matrix.
fn block_diag_vectors<T: Scalar>(gt: &GroundTruth<T>) -> DMatrix<T> {
    let (n, d) = (gt.n(), gt.d());
    let mut m = DMatrix::zeros(n * d, n);
    for (i, t) in gt.translations().iter().enumerate() {
        m.view_mut((i * d, i), (d, 1)).copy_from(t);
    }
    m
}

/// `BlkDiag(sum_j x_1j, ..) - x` for an `nd x n` block matrix `x`.
fn row_sum_minus<T: Scalar>(x: &DMatrix<T>, n: usize, d: usize) -> (DMatrix<T>, DMatrix<T>) {
    let mut diag = DMatrix::zeros(n * d, n);
    for i in 0..n {
        diag.view_mut((i * d, i), (d, 1)).copy_from(&x.rows(i * d, d).column_sum());
    }
    let full = &diag - x;
    (full, diag)
}

/// Assembles every matrix of the decomposition from `gt` and observations
/// generated from it in mirrored mode.
pub fn build_ground_truth_decomposition<T: Scalar>(
    gt: &GroundTruth<T>,
    obs: &ObservationSet<T>,
) -> Result<GroundTruthDecomposition<T>> {
    let sigma2 = obs
        .sigma2
        .ok_or_else(|| Error::DiagnosticsUnavailable("translation noise level is unknown".into()))?;
    if obs.sigma1.is_none() {
        return Err(Error::DiagnosticsUnavailable("rotation noise level is unknown".into()));
    }
    if obs.mirror_mode != MirrorMode::Mirrored {
        return Err(Error::DiagnosticsUnavailable("decomposition assumes mirrored noise".into()));
    }
    if obs.n() != gt.n() || obs.d() != gt.d() {
        return Err(Error::DiagnosticsUnavailable(format!(
            "observations ({}, {}) do not match ground truth ({}, {})",
            obs.n(),
            obs.d(),
            gt.n(),
            gt.d()
        )));
    }
    let (n, d) = (gt.n(), gt.d());
    let nd = n * d;
    let nf = cast::<T>(n as f64);
    let two = cast::<T>(2.0);
    let half = cast::<T>(0.5);

    let mut s_star = DMatrix::zeros(nd, n);
    let mut w_r = DMatrix::zeros(nd, nd);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            s_star.view_mut((i * d, j), (d, 1)).copy_from(&gt.relative_translation(i, j));
            let noise = obs.rotation_block(i, j) - gt.relative_rotation(i, j);
            w_r.view_mut((i * d, j * d), (d, d)).copy_from(&noise);
        }
    }
    let w_t = obs.translation_matrix() - &s_star;
    let (t_star, t_star_diag) = row_sum_minus(&s_star, n, d);
    let (e_noise, e_diag) = row_sum_minus(&w_t, n, d);

    let mut sigma_star = DMatrix::zeros(nd, nd);
    let mut delta_sigma = DMatrix::zeros(nd, nd);
    let centre = DMatrix::<T>::identity(d, d) * (sigma2 * sigma2);
    for i in 0..n {
        let s_rows = s_star.rows(i * d, d);
        sigma_star.view_mut((i * d, i * d), (d, d)).copy_from(&(&s_rows * s_rows.transpose()));
        let mut block = DMatrix::zeros(d, d);
        for j in (0..n).filter(|&j| j != i) {
            let s = s_star.view((i * d, j), (d, 1));
            let w = w_t.view((i * d, j), (d, 1));
            block += &s * w.transpose() + &w * s.transpose() + &w * w.transpose() - &centre;
        }
        delta_sigma.view_mut((i * d, i * d), (d, d)).copy_from(&block);
    }
    let delta_t = (&e_noise * t_star.transpose() + &t_star * e_noise.transpose() + &e_noise * e_noise.transpose())
        / (two * nf);
    let delta = &delta_sigma - &delta_t - &w_r * two;

    let mut h = build_omega(obs).omega;
    for k in 0..nd {
        h[(k, k)] -= sigma2 * sigma2 * cast::<T>(n as f64 - 1.0);
    }

    // Xi* and Upsilon*.
    let bt = block_diag_vectors(gt);
    let mut d_outer = DMatrix::zeros(nd, nd);
    let mut gram_sum = DMatrix::zeros(d, d);
    for (i, t) in gt.translations().iter().enumerate() {
        let o = t * t.transpose();
        gram_sum += &o;
        d_outer.view_mut((i * d, i * d), (d, d)).copy_from(&o);
    }
    let mut xi_star = &d_outer * (nf * half);
    for i in 0..n {
        let mut block = xi_star.view_mut((i * d, i * d), (d, d));
        block += &gram_sum;
    }
    let j_kron = DMatrix::from_element(n, n, T::one()).kronecker(&DMatrix::identity(d, d));
    let j_n = DMatrix::from_element(n, n, T::one());
    let upsilon_star = (&d_outer * &j_kron) * half + (&j_kron * &d_outer) * half
        + (&j_kron * &d_outer * &j_kron) / (two * nf)
        - (&bt * &j_n * bt.transpose()) * half;

    let mut block_rotations = DMatrix::zeros(nd, nd);
    for (i, r) in gt.rotations().iter().enumerate() {
        block_rotations.view_mut((i * d, i * d), (d, d)).copy_from(r.matrix());
    }
    let laplacian = DMatrix::identity(n, n) * nf - j_n;

    Ok(GroundTruthDecomposition {
        n,
        d,
        sigma2,
        t_star,
        t_star_diag,
        s_star,
        sigma_star,
        xi_star,
        upsilon_star,
        e_noise,
        e_diag,
        w_t,
        w_r,
        delta,
        h,
        block_rotations,
        stacked_rotations: gt.stacked_rotations(),
        laplacian,
    })
}

impl<T: Scalar> GroundTruthDecomposition<T> {
    /// `2n I - 2 R* R*^T`.
    fn signal(&self) -> DMatrix<T> {
        let nd = self.n * self.d;
        DMatrix::identity(nd, nd) * cast::<T>(2.0 * self.n as f64)
            - &self.stacked_rotations * self.stacked_rotations.transpose() * cast::<T>(2.0)
    }

    /// `BR (Xi* - Upsilon*) BR^T`.
    pub fn rotated_translation_term(&self) -> DMatrix<T> {
        &self.block_rotations * (&self.xi_star - &self.upsilon_star) * self.block_rotations.transpose()
    }

    /// `|H - (2nI - 2R*R*^T + BR(Xi* - Upsilon*)BR^T + Delta)|_F / |H|_F`.
    pub fn decomposition_residual(&self) -> f64 {
        let rhs = self.signal() + self.rotated_translation_term() + &self.delta;
        to_f64((&self.h - rhs).norm()) / to_f64(self.h.norm()).max(f64::MIN_POSITIVE)
    }

    /// `|H - (2nI - 2R*R*^T + Sigma* - (1/2n) T* T*^T + Delta)|_F / |H|_F`.
    pub fn expansion_residual(&self) -> f64 {
        let rhs = self.signal() + &self.sigma_star
            - &self.t_star * self.t_star.transpose() / cast::<T>(2.0 * self.n as f64)
            + &self.delta;
        to_f64((&self.h - rhs).norm()) / to_f64(self.h.norm()).max(f64::MIN_POSITIVE)
    }

    /// `|Sigma* - (1/2n) T* T*^T - BR(Xi* - Upsilon*)BR^T|_F`, relative to
    /// `max(|Sigma*|_F, 1)`.
    pub fn translation_identity_residual(&self) -> f64 {
        let lhs = &self.sigma_star - &self.t_star * self.t_star.transpose() / cast::<T>(2.0 * self.n as f64);
        to_f64((lhs - self.rotated_translation_term()).norm()) / to_f64(self.sigma_star.norm()).max(1.0)
    }

    pub fn delta_norm(&self) -> f64 {
        spectral_norm(&self.delta)
    }
}

/// `|(J_n (x) I_d) BlkDiag(t_1, .., t_n) J_n|_F`, zero when `sum t_i = 0`.
pub fn centering_identity_residual<T: Scalar>(gt: &GroundTruth<T>) -> f64 {
    let (n, d) = (gt.n(), gt.d());
    let j_kron = DMatrix::from_element(n, n, T::one()).kronecker(&DMatrix::<T>::identity(d, d));
    let product = j_kron * block_diag_vectors(gt) * DMatrix::from_element(n, n, T::one());
    to_f64(product.norm())
}

/// Operator 2-norm.
pub fn spectral_norm<T: Scalar>(m: &DMatrix<T>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    to_f64(m.clone().singular_values().max())
}

/// Whether a logged quantity is a hard check or informational.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    /// `value <= bound` must hold.
    UpperBound,
    /// `value >= bound` must hold.
    LowerBound,
    /// Reported next to a rate with unknown constant; never fails.
    Logged,
}

/// One row of a diagnostics report.
#[derive(Debug, Clone)]
pub struct BoundCheck {
    pub quantity: String,
    pub value: f64,
    pub bound: f64,
    pub kind: CheckKind,
}

impl CheckKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CheckKind::UpperBound => "upper",
            CheckKind::LowerBound => "lower",
            CheckKind::Logged => "logged",
        }
    }
}

impl BoundCheck {
    pub fn new(quantity: impl Into<String>, value: f64, bound: f64, kind: CheckKind) -> Self {
        Self { quantity: quantity.into(), value, bound, kind }
    }

    /// `value / bound`, or `0` when both are zero.
    pub fn ratio(&self) -> f64 {
        if self.bound == 0.0 && self.value == 0.0 {
            0.0
        } else {
            self.value / self.bound
        }
    }

    pub fn satisfied(&self) -> bool {
        let slack = 1e-12 * (1.0 + self.bound.abs());
        match self.kind {
            CheckKind::UpperBound => self.value <= self.bound + slack,
            CheckKind::LowerBound => self.value >= self.bound - slack,
            CheckKind::Logged => true,
        }
    }
}

/// The four deterministic bounds on the clean translation matrices:
/// `|T*_D| <= M_t n`, `|s*| <= 2 M_t n`, `|T*| <= 3 M_t n` and
/// `|s*_i| <= 2 M_t sqrt(n)` for every block row `i`.
pub fn check_norm_bounds<T: Scalar>(decomp: &GroundTruthDecomposition<T>, gt: &GroundTruth<T>) -> Vec<BoundCheck> {
    let (n, d) = (decomp.n, decomp.d);
    let m_t = to_f64(gt.max_translation_norm());
    let nf = n as f64;
    let worst_row = (0..n)
        .map(|i| spectral_norm(&decomp.s_star.rows(i * d, d).into_owned()))
        .fold(0.0, f64::max);
    vec![
        BoundCheck::new("norm_T_star_D", spectral_norm(&decomp.t_star_diag), m_t * nf, CheckKind::UpperBound),
        BoundCheck::new("norm_s_star", spectral_norm(&decomp.s_star), 2.0 * m_t * nf, CheckKind::UpperBound),
        BoundCheck::new("norm_T_star", spectral_norm(&decomp.t_star), 3.0 * m_t * nf, CheckKind::UpperBound),
        BoundCheck::new("max_norm_s_star_i", worst_row, 2.0 * m_t * nf.sqrt(), CheckKind::UpperBound),
    ]
}

/// Spectral gap of `H` against `|Delta|`:
/// `lambda_d(H) <= |Delta|` and `lambda_{d+1}(H) >= 2n - |Delta|`.
pub fn check_eigen_gap<T: Scalar>(decomp: &GroundTruthDecomposition<T>) -> Result<Vec<BoundCheck>> {
    let d = decomp.d;
    let (values, _) = T::symmetric_eigen(&decomp.h)?;
    let delta = decomp.delta_norm();
    let two_n = 2.0 * decomp.n as f64;
    let mut rows = vec![
        BoundCheck::new("lambda_d_H", to_f64(values[d - 1]), delta + 1e-8, CheckKind::UpperBound),
    ];
    if values.len() > d {
        rows.push(BoundCheck::new("lambda_d+1_H", to_f64(values[d]), two_n - delta - 1e-8, CheckKind::LowerBound));
    }
    Ok(rows)
}

/// Measured noise norms next to their theoretical rates (constant 1).
pub fn logged_rates<T: Scalar>(decomp: &GroundTruthDecomposition<T>) -> Result<Vec<BoundCheck>> {
    let (n, d) = (decomp.n as f64, decomp.d as f64);
    let s2 = to_f64(decomp.sigma2);
    let rate = s2 * ((n * d).sqrt() + (n * n.ln()).sqrt());
    let gap = &decomp.xi_star - &decomp.upsilon_star;
    let (values, _) = T::symmetric_eigen(&((&gap + gap.transpose()) * cast::<T>(0.5)))?;
    Ok(vec![
        BoundCheck::new("norm_E_D", spectral_norm(&decomp.e_diag), rate, CheckKind::Logged),
        BoundCheck::new("norm_w_t", spectral_norm(&decomp.w_t), s2 * (n * d).sqrt(), CheckKind::Logged),
        BoundCheck::new("norm_E", spectral_norm(&decomp.e_noise), rate, CheckKind::Logged),
        BoundCheck::new("norm_W_R", spectral_norm(&decomp.w_r), 0.0, CheckKind::Logged),
        BoundCheck::new("norm_Delta", decomp.delta_norm(), n / 4.0, CheckKind::Logged),
        BoundCheck::new("min_eig_Xi_minus_Upsilon", to_f64(values[0]), 0.0, CheckKind::Logged),
    ])
}

/// CSV rows `quantity,value,bound,ratio,kind,satisfied`.
pub fn write_report_csv<W: Write>(rows: &[BoundCheck], mut w: W) -> Result<()> {
    writeln!(w, "quantity,value,bound,ratio,kind,satisfied")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.quantity, r.value, r.bound, r.ratio(), r.kind.as_str(), r.satisfied())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use crate::synthesis::{generate_ground_truth, observations_from_motions, synthesize_observations};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn setup(n: usize, d: usize, s1: f64, s2: f64, seed: u64) -> (GroundTruth<f64>, GroundTruthDecomposition<f64>) {
        let gt = generate_ground_truth(n, d, 1.0, &mut rng(seed)).unwrap();
        let obs = synthesize_observations(&gt, s1, s2, &mut rng(seed + 1), MirrorMode::Mirrored).unwrap();
        let dec = build_ground_truth_decomposition(&gt, &obs).unwrap();
        (gt, dec)
    }

    #[test]
    fn noiseless_decomposition() {
        let (_, dec) = setup(7, 3, 0.0, 0.0, 1);
        assert_eq!(dec.e_noise.norm(), 0.0);
        assert!(dec.delta.norm() < 1e-12);
        assert!(dec.expansion_residual() < 1e-12);
    }

    #[test]
    fn decomposition_identity_on_noisy_instances() {
        for (k, d) in [2usize, 3].into_iter().enumerate() {
            for seed in 0..5 {
                let (_, dec) = setup(10, d, 0.6, 0.4, 100 * k as u64 + seed);
                assert!(dec.decomposition_residual() <= 1e-8);
                assert!(dec.expansion_residual() <= 1e-8);
                assert!(dec.translation_identity_residual() <= 1e-8);
            }
        }
    }

    #[test]
    fn centering_identity() {
        let (gt, _) = setup(9, 3, 0.0, 0.0, 3);
        assert!(centering_identity_residual(&gt) < 1e-12);
    }

    #[test]
    fn xi_star_is_block_diagonal_psd() {
        let (_, dec) = setup(6, 3, 0.1, 0.1, 4);
        for i in 0..6 {
            for j in 0..6 {
                let block = dec.xi_star.view((3 * i, 3 * j), (3, 3)).into_owned();
                if i == j {
                    assert!(block.symmetric_eigenvalues().min() >= -1e-12);
                } else {
                    assert_eq!(block.norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn norm_bounds_hold() {
        for seed in 0..20 {
            let (gt, dec) = setup(50, 3, 0.2, 0.2, 200 + seed);
            assert!(check_norm_bounds(&dec, &gt).iter().all(BoundCheck::satisfied));
        }
    }

    #[test]
    fn norm_bounds_with_zero_translations() {
        let rots = vec![Rotation::<f64>::identity(2); 4];
        let gt = GroundTruth::new(rots, vec![DVector::zeros(2); 4]).unwrap();
        let obs = synthesize_observations(&gt, 0.0, 0.0, &mut rng(0), MirrorMode::Mirrored).unwrap();
        let dec = build_ground_truth_decomposition(&gt, &obs).unwrap();
        for row in check_norm_bounds(&dec, &gt) {
            assert_eq!(row.value, 0.0);
            assert_eq!(row.bound, 0.0);
            assert!(row.satisfied());
        }
    }

    #[test]
    fn norm_bounds_with_one_large_translation() {
        let mut r = rng(5);
        let gt: GroundTruth<f64> = generate_ground_truth(12, 3, 0.1, &mut r).unwrap();
        let mut translations = gt.translations().to_vec();
        translations[4] = DVector::from_vec(vec![500.0, -20.0, 3.0]);
        let gt = GroundTruth::new(gt.rotations().to_vec(), translations).unwrap();
        let obs = synthesize_observations(&gt, 0.0, 0.0, &mut r, MirrorMode::Mirrored).unwrap();
        let dec = build_ground_truth_decomposition(&gt, &obs).unwrap();
        assert!(check_norm_bounds(&dec, &gt).iter().all(BoundCheck::satisfied));
    }

    #[test]
    fn eigen_gap_noiseless_and_small_noise() {
        let (_, dec) = setup(10, 3, 0.0, 0.0, 6);
        let rows = check_eigen_gap(&dec).unwrap();
        assert!(rows[0].value <= 1e-8);
        assert!(rows[1].value >= 20.0 - 1e-8);
        assert!(rows.iter().all(BoundCheck::satisfied));

        let (_, dec) = setup(30, 3, 0.05, 0.05, 7);
        assert!(dec.delta_norm() <= 30.0 / 4.0);
        assert!(check_eigen_gap(&dec).unwrap().iter().all(BoundCheck::satisfied));
    }

    #[test]
    fn identity_ground_truth_gap_is_exact() {
        let rots = vec![Rotation::<f64>::identity(3); 5];
        let gt = GroundTruth::new(rots, vec![DVector::zeros(3); 5]).unwrap();
        let obs = synthesize_observations(&gt, 0.0, 0.0, &mut rng(0), MirrorMode::Mirrored).unwrap();
        let dec = build_ground_truth_decomposition(&gt, &obs).unwrap();
        let rows = check_eigen_gap(&dec).unwrap();
        assert!((rows[1].value - 10.0).abs() < 1e-10);
    }

    #[test]
    fn unknown_noise_is_rejected() {
        let (gt, _) = setup(4, 3, 0.0, 0.0, 8);
        let motions = gt.motions();
        let grid: Vec<Vec<_>> = motions.iter().map(|a| motions.iter().map(|b| Some(a.relative(b).unwrap())).collect()).collect();
        let obs = observations_from_motions(&grid).unwrap();
        assert!(matches!(
            build_ground_truth_decomposition(&gt, &obs),
            Err(Error::DiagnosticsUnavailable(_))
        ));
    }

    #[test]
    fn report_csv_layout() {
        let (gt, dec) = setup(6, 2, 0.2, 0.2, 9);
        let mut rows = check_norm_bounds(&dec, &gt);
        rows.extend(check_eigen_gap(&dec).unwrap());
        rows.extend(logged_rates(&dec).unwrap());
        let mut buf = Vec::new();
        write_report_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), rows.len() + 1);
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == 6));
    }
}
