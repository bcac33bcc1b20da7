//! Spectral estimators for SE(d) synchronization.
//!
//! * [`ase`]: eigenvectors of the full data matrix, rounded with the
//!   anchored projection `R_i = Pi(Phi_i Phi_1^T)`.
//! * [`two_stage`]: rotations from the rotation comparisons alone, then
//!   translations by least squares.
//! * [`naive_projection`]: eigenvectors of the full data matrix, each block
//!   projected on its own, optionally after a global column sign flip.
//!
//! All three share the closed-form translation step [`recover_translations`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::data_matrix::{build_omega, build_t_hat, rotation_only_matrix, DataMatrix};
use crate::error::{Error, Result};
use crate::geometry::{project_so_checked, RigidMotion, Rotation};
use crate::scalar::{cast, to_f64, Scalar};
use crate::spectral::{smallest_eigvecs, SpectralBasis};
use crate::synthesis::ObservationSet;

/// Which estimator produced an [`EstimateSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ase,
    TwoStage,
    NaiveProjection { sign_flip: bool },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ase => "ase",
            Method::TwoStage => "two-stage",
            Method::NaiveProjection { sign_flip: false } => "naive",
            Method::NaiveProjection { sign_flip: true } => "naive-flip",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ase" => Ok(Method::Ase),
            "two-stage" => Ok(Method::TwoStage),
            "naive" => Ok(Method::NaiveProjection { sign_flip: false }),
            "naive-flip" => Ok(Method::NaiveProjection { sign_flip: true }),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected ase, two-stage, naive or naive-flip)"
            ))),
        }
    }
}

/// Block used to cancel the eigenbasis's orthogonal ambiguity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Anchor {
    /// Block 1, as in the reference algorithm.
    #[default]
    First,
    /// The block with the largest Frobenius norm.
    LargestBlock,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EstimatorOptions {
    pub anchor: Anchor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// `lambda_{d+1} - lambda_d` is numerically zero.
    DegenerateSpectrum { gap: f64 },
    /// Projection of this block onto SO(d) was not unique.
    DegenerateProjection { block: usize },
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics<T: Scalar> {
    /// The `d` smallest eigenvalues of the matrix the rotations came from.
    pub eigenvalues: Vec<T>,
    pub warnings: Vec<Warning>,
}

/// `n` estimated rigid motions.
#[derive(Debug, Clone)]
pub struct EstimateSet<T: Scalar> {
    pub n: usize,
    pub d: usize,
    pub motions: Vec<RigidMotion<T>>,
    pub method: Method,
    pub diagnostics: Diagnostics<T>,
}

impl<T: Scalar> EstimateSet<T> {
    pub fn rotations(&self) -> impl Iterator<Item = &Rotation<T>> {
        self.motions.iter().map(|g| &g.rotation)
    }
}

/// Closed-form translations for fixed rotations:
/// `t_i = -(1 / 2n) sum_k R_k^T T_hat[block k, column i]`.
///
/// This is the minimizer of `sum_ij |t_j - t_i - R_i^T s_ij|^2` with
/// `sum_i t_i = 0`.
pub fn recover_translations<T: Scalar>(rotations: &[Rotation<T>], t_hat: &DMatrix<T>) -> Result<Vec<DVector<T>>> {
    let n = rotations.len();
    let d = rotations.first().map_or(0, Rotation::dim);
    if t_hat.shape() != (n * d, n) {
        return Err(Error::DimensionMismatch { expected: n * d, got: t_hat.nrows() });
    }
    let mut rt = DMatrix::zeros(d, n);
    for (k, r) in rotations.iter().enumerate() {
        rt.gemm_tr(T::one(), r.matrix(), &t_hat.rows(k * d, d), T::one());
    }
    let scale = -T::one() / cast::<T>(2.0 * n as f64);
    Ok(rt.column_iter().map(|c| c * scale).collect())
}

/// Anchored rounding `R_i = Pi(Phi_i Phi_a^T)` for every block `i`.
pub fn anchored_rounding<T: Scalar>(
    phi: &DMatrix<T>,
    d: usize,
    anchor: usize,
) -> Result<(Vec<Rotation<T>>, Vec<Warning>)> {
    let n = phi.nrows() / d;
    if anchor >= n {
        return Err(Error::InvalidInput(format!("anchor {anchor} out of range for {n} blocks")));
    }
    let anchor_block = phi.rows(anchor * d, d);
    round_blocks(n, |i| phi.rows(i * d, d) * anchor_block.transpose())
}

/// Independent projection `R_i = Pi(Phi_i)` of every block.
pub fn naive_rounding<T: Scalar>(phi: &DMatrix<T>, d: usize) -> Result<(Vec<Rotation<T>>, Vec<Warning>)> {
    round_blocks(phi.nrows() / d, |i| phi.rows(i * d, d).into_owned())
}

fn round_blocks<T: Scalar>(
    n: usize,
    block: impl Fn(usize) -> DMatrix<T>,
) -> Result<(Vec<Rotation<T>>, Vec<Warning>)> {
    let mut warnings = Vec::new();
    let mut rotations = Vec::with_capacity(n);
    for i in 0..n {
        let p = project_so_checked(&block(i))?;
        if p.degenerate {
            warnings.push(Warning::DegenerateProjection { block: i });
        }
        rotations.push(p.rotation);
    }
    Ok((rotations, warnings))
}

/// Column signs `s in {+1, -1}^d` maximizing the number of blocks with
/// `det(Phi_i diag(s)) > 0`. Ties go to the candidate with the most leading
/// `+1`s, so `(+1, .., +1)` wins whenever it is optimal.
pub fn sign_flip_choice<T: Scalar>(phi: &DMatrix<T>, d: usize) -> Vec<T> {
    let n = phi.nrows() / d;
    let dets: Vec<T> = (0..n).map(|i| phi.rows(i * d, d).determinant()).collect();
    let mut best: Option<(usize, u32)> = None;
    for mask in 0u32..(1 << d) {
        let parity = if mask.count_ones() % 2 == 0 { T::one() } else { -T::one() };
        let count = dets.iter().filter(|&&det| det * parity > T::zero()).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, mask));
        }
    }
    let mask = best.map_or(0, |(_, m)| m);
    (0..d).map(|k| if mask >> (d - 1 - k) & 1 == 1 { -T::one() } else { T::one() }).collect()
}

fn assemble<T: Scalar>(
    method: Method,
    basis: &SpectralBasis<T>,
    rotations: Vec<Rotation<T>>,
    mut warnings: Vec<Warning>,
    t_hat: &DMatrix<T>,
) -> Result<EstimateSet<T>> {
    let translations = recover_translations(&rotations, t_hat)?;
    if let Some(gap) = basis.degenerate_gap {
        warnings.insert(0, Warning::DegenerateSpectrum { gap: to_f64(gap) });
    }
    let motions = rotations
        .into_iter()
        .zip(translations)
        .map(|(rotation, translation)| RigidMotion { rotation, translation })
        .collect();
    Ok(EstimateSet {
        n: basis.n,
        d: basis.d,
        motions,
        method,
        diagnostics: Diagnostics { eigenvalues: basis.eigenvalues.clone(), warnings },
    })
}

fn anchor_index<T: Scalar>(basis: &SpectralBasis<T>, anchor: Anchor) -> usize {
    match anchor {
        Anchor::First => 0,
        Anchor::LargestBlock => (0..basis.n)
            .map(|i| (i, basis.phi.rows(i * basis.d, basis.d).norm()))
            .fold((0, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0,
    }
}

/// Anchored spectral estimate from a precomputed basis of `Omega`.
pub fn ase_from_basis<T: Scalar>(
    basis: &SpectralBasis<T>,
    t_hat: &DMatrix<T>,
    options: &EstimatorOptions,
) -> Result<EstimateSet<T>> {
    let (rotations, warnings) = anchored_rounding(&basis.phi, basis.d, anchor_index(basis, options.anchor))?;
    assemble(Method::Ase, basis, rotations, warnings, t_hat)
}

/// Naive-projection estimate from a precomputed basis of `Omega`.
pub fn naive_from_basis<T: Scalar>(
    basis: &SpectralBasis<T>,
    t_hat: &DMatrix<T>,
    sign_flip: bool,
) -> Result<EstimateSet<T>> {
    let (rotations, warnings) = if sign_flip {
        let signs = sign_flip_choice(&basis.phi, basis.d);
        let mut phi = basis.phi.clone();
        for (mut col, s) in phi.column_iter_mut().zip(signs) {
            col *= s;
        }
        naive_rounding(&phi, basis.d)?
    } else {
        naive_rounding(&basis.phi, basis.d)?
    };
    assemble(Method::NaiveProjection { sign_flip }, basis, rotations, warnings, t_hat)
}

/// Anchored spectral estimator.
pub fn ase<T: Scalar>(obs: &ObservationSet<T>) -> Result<EstimateSet<T>> {
    ase_with(obs, &EstimatorOptions::default())
}

pub fn ase_with<T: Scalar>(obs: &ObservationSet<T>, options: &EstimatorOptions) -> Result<EstimateSet<T>> {
    check_obs(obs)?;
    let dm = build_omega(obs);
    let basis = smallest_eigvecs(&dm.omega, dm.d)?;
    ase_from_basis(&basis, &dm.t_hat, options)
}

/// Two-stage baseline: anchored rounding of the eigenvectors of
/// `2n I - (S + S^T)`, then the closed-form translations.
pub fn two_stage<T: Scalar>(obs: &ObservationSet<T>) -> Result<EstimateSet<T>> {
    two_stage_with(obs, &EstimatorOptions::default())
}

pub fn two_stage_with<T: Scalar>(obs: &ObservationSet<T>, options: &EstimatorOptions) -> Result<EstimateSet<T>> {
    check_obs(obs)?;
    let basis = smallest_eigvecs(&rotation_only_matrix(obs), obs.d())?;
    let t_hat = build_t_hat(obs);
    let (rotations, warnings) = anchored_rounding(&basis.phi, basis.d, anchor_index(&basis, options.anchor))?;
    assemble(Method::TwoStage, &basis, rotations, warnings, &t_hat)
}

/// Naive projection of each eigenvector block onto SO(d).
pub fn naive_projection<T: Scalar>(obs: &ObservationSet<T>, sign_flip: bool) -> Result<EstimateSet<T>> {
    check_obs(obs)?;
    let dm = build_omega(obs);
    let basis = smallest_eigvecs(&dm.omega, dm.d)?;
    naive_from_basis(&basis, &dm.t_hat, sign_flip)
}

/// Runs several estimators on one observation set, sharing the
/// eigendecomposition of `Omega` between the methods that use it.
pub fn run_methods<T: Scalar>(
    obs: &ObservationSet<T>,
    methods: &[Method],
    options: &EstimatorOptions,
) -> Result<Vec<EstimateSet<T>>> {
    check_obs(obs)?;
    let mut full: Option<(DataMatrix<T>, SpectralBasis<T>)> = None;
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let est = match method {
            Method::TwoStage => two_stage_with(obs, options)?,
            Method::Ase | Method::NaiveProjection { .. } => {
                if full.is_none() {
                    let dm = build_omega(obs);
                    let basis = smallest_eigvecs(&dm.omega, dm.d)?;
                    full = Some((dm, basis));
                }
                let (dm, basis) = full.as_ref().expect("initialized above");
                match method {
                    Method::NaiveProjection { sign_flip } => naive_from_basis(basis, &dm.t_hat, sign_flip)?,
                    _ => ase_from_basis(basis, &dm.t_hat, options)?,
                }
            }
        };
        out.push(est);
    }
    Ok(out)
}

/// Dispatches a single method.
pub fn estimate<T: Scalar>(obs: &ObservationSet<T>, method: Method, options: &EstimatorOptions) -> Result<EstimateSet<T>> {
    match method {
        Method::Ase => ase_with(obs, options),
        Method::TwoStage => two_stage_with(obs, options),
        Method::NaiveProjection { sign_flip } => naive_projection(obs, sign_flip),
    }
}

fn check_obs<T: Scalar>(obs: &ObservationSet<T>) -> Result<()> {
    if obs.n() < 2 {
        return Err(Error::InvalidInput(format!("need n >= 2, got {}", obs.n())));
    }
    Ok(())
}
