//! Gauge alignment and error metrics.
//!
//! Synchronization recovers motions only up to a common left factor
//! `Q in SE(d)`, so every error is measured after aligning the ground truth
//! with a single `Q` shared by all motions.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimators::{EstimateSet, Method};
use crate::geometry::{check_same_dim, geodesic_angle_deg, project_so, RigidMotion};
use crate::scalar::{cast, to_f64, Scalar};
use crate::synthesis::GroundTruth;

/// Errors of one estimate against the aligned ground truth.
#[derive(Debug, Clone)]
pub struct ErrorReport<T: Scalar> {
    pub method: Method,
    /// `max_i |hom(G_hat_i) - hom(Q G*_i)|_F`.
    pub max_se_error: f64,
    pub avg_rotation_deg: f64,
    pub max_rotation_deg: f64,
    pub avg_translation_err: f64,
    pub max_translation_err: f64,
    pub alignment: RigidMotion<T>,
}

/// Common gauge `Q = (P, p)` with `P = Pi_SO(sum_i R*_i^T R_hat_i)` and
/// `p = mean_i (t_hat_i - P^T t*_i)`.
///
/// The aligned ground truth is `Q G*_i = (R*_i P, P^T t*_i + p)`.
pub fn align_global<T: Scalar>(est: &EstimateSet<T>, gt: &GroundTruth<T>) -> Result<RigidMotion<T>> {
    align_motions(&est.motions, &gt.motions())
}

/// [`align_global`] on plain motion lists.
pub fn align_motions<T: Scalar>(est: &[RigidMotion<T>], truth: &[RigidMotion<T>]) -> Result<RigidMotion<T>> {
    if est.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: est.len() });
    }
    let d = truth.first().map(RigidMotion::dim).ok_or_else(|| Error::InvalidInput("no motions".into()))?;
    let mut cross = DMatrix::zeros(d, d);
    for (g_hat, g) in est.iter().zip(truth) {
        check_same_dim(d, g_hat.dim())?;
        check_same_dim(d, g.dim())?;
        cross.gemm_tr(T::one(), g.rotation.matrix(), g_hat.rotation.matrix(), T::one());
    }
    let p_rot = project_so(&cross)?;
    let mut offset = nalgebra::DVector::zeros(d);
    for (g_hat, g) in est.iter().zip(truth) {
        offset += &g_hat.translation - p_rot.matrix().tr_mul(&g.translation);
    }
    offset /= cast::<T>(est.len() as f64);
    RigidMotion::new(p_rot, offset)
}

/// Rotation, translation and homogeneous errors after [`align_global`].
pub fn error_report<T: Scalar>(est: &EstimateSet<T>, gt: &GroundTruth<T>) -> Result<ErrorReport<T>> {
    if est.n != gt.n() {
        return Err(Error::DimensionMismatch { expected: gt.n(), got: est.n });
    }
    check_same_dim(gt.d(), est.d)?;
    let q = align_global(est, gt)?;
    let mut rot = Vec::with_capacity(est.n);
    let mut trans = Vec::with_capacity(est.n);
    let mut max_se = 0.0f64;
    for (g_hat, g) in est.motions.iter().zip(gt.motions()) {
        let aligned = q.compose(&g)?;
        rot.push(to_f64(geodesic_angle_deg(&g_hat.rotation, &aligned.rotation)?));
        trans.push(to_f64((&g_hat.translation - &aligned.translation).norm()));
        max_se = max_se.max(to_f64((g_hat.homogeneous() - aligned.homogeneous()).norm()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(ErrorReport {
        method: est.method,
        max_se_error: max_se,
        avg_rotation_deg: mean(&rot),
        max_rotation_deg: max(&rot),
        avg_translation_err: mean(&trans),
        max_translation_err: max(&trans),
        alignment: q,
    })
}
