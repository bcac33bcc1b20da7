//! Built-in invariant checks with a pass/fail table.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data_matrix::{build_omega, build_t_hat};
use crate::diagnostics::{build_ground_truth_decomposition, check_eigen_gap, check_norm_bounds, BoundCheck};
use crate::error::Result;
use crate::estimators::{ase, recover_translations};
use crate::evaluation::error_report;
use crate::geometry::{project_so, random_rotation, RigidMotion, Rotation};
use crate::registration::{kabsch_pairwise, synthetic_scene};
use crate::scalar::Scalar;
use crate::synthesis::{generate_ground_truth, synthesize_observations, GroundTruth, MirrorMode, ObservationSet};

/// Fault injection for exercising the failure path.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestOptions {
    /// Adds a symmetric perturbation to `Omega` before the null-space check.
    pub corrupt_omega: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SelftestRow {
    pub check: String,
    pub measured: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub rows: Vec<SelftestRow>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    /// Fixed-width table for the terminal.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{:<40} {:>14} {:>14}  result", "check", "measured", "bound")?;
        for r in &self.rows {
            let verdict = if r.passed { "pass" } else { "FAIL" };
            writeln!(w, "{:<40} {:>14.6e} {:>14.6e}  {verdict}", r.check, r.measured, r.bound)?;
        }
        let failed = self.rows.iter().filter(|r| !r.passed).count();
        writeln!(w, "{} checks, {} failed", self.rows.len(), failed)?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check,measured,bound,passed")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.check, r.measured, r.bound, r.passed)?;
        }
        Ok(())
    }
}

struct Rows(Vec<SelftestRow>);

impl Rows {
    fn upper(&mut self, check: impl Into<String>, measured: f64, bound: f64) {
        self.0.push(SelftestRow { check: check.into(), measured, bound, passed: measured <= bound });
    }

    fn lower(&mut self, check: impl Into<String>, measured: f64, bound: f64) {
        self.0.push(SelftestRow { check: check.into(), measured, bound, passed: measured >= bound });
    }

    fn bound(&mut self, c: BoundCheck) {
        self.0.push(SelftestRow { passed: c.satisfied(), check: c.quantity, measured: c.value, bound: c.bound });
    }
}

/// Dense least-squares solve of `min sum_ij |t_j - t_i - R_i^T s_ij|^2`
/// with a `sum_i t_i = 0` row block.
fn translation_oracle(rotations: &[Rotation<f64>], obs: &ObservationSet<f64>) -> Vec<DVector<f64>> {
    let (n, d) = (obs.n(), obs.d());
    let rows = (n * n + 1) * d;
    let mut a = DMatrix::zeros(rows, n * d);
    let mut b = DVector::zeros(rows);
    for i in 0..n {
        for j in 0..n {
            let r = (i * n + j) * d;
            for k in 0..d {
                a[(r + k, j * d + k)] += 1.0;
                a[(r + k, i * d + k)] -= 1.0;
            }
            b.rows_mut(r, d).copy_from(&rotations[i].matrix().tr_mul(&obs.translation(i, j)));
        }
    }
    for i in 0..n {
        for k in 0..d {
            a[(n * n * d + k, i * d + k)] = 1.0;
        }
    }
    let x = (a.transpose() * &a).lu().solve(&(a.transpose() * b)).unwrap_or_else(|| DVector::zeros(n * d));
    (0..n).map(|i| x.rows(i * d, d).into_owned()).collect()
}

/// Runs every check. Failures are reported in the table, never returned
/// as errors; an `Err` means a check could not run at all.
pub fn run_selftest(options: SelftestOptions) -> Result<SelftestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut rows = Rows(Vec::new());

    // Geometry.
    let mut worst_orth = 0.0f64;
    let mut worst_det = 0.0f64;
    for d in [2, 3, 5] {
        for _ in 0..50 {
            let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let p = project_so(&m)?;
            worst_orth = worst_orth.max((p.matrix().transpose() * p.matrix() - DMatrix::identity(d, d)).norm());
            let r: Rotation<f64> = random_rotation(&mut rng, d)?;
            worst_det = worst_det.max((r.matrix().determinant() - 1.0).abs());
        }
    }
    rows.upper("project_so_orthogonality", worst_orth, 1e-10);
    rows.upper("haar_determinant", worst_det, 1e-10);
    let mut worst_group = 0.0f64;
    for _ in 0..50 {
        let g1 = random_motion(&mut rng)?;
        let g2 = random_motion(&mut rng)?;
        let lhs = g1.compose(&g2)?.homogeneous();
        worst_group = worst_group.max((lhs - g1.homogeneous() * g2.homogeneous()).norm());
        worst_group = worst_group.max((g1.invert().homogeneous() * g1.homogeneous() - DMatrix::identity(4, 4)).norm());
    }
    rows.upper("group_laws", worst_group, 1e-10);

    // Null space and gap of the noiseless data matrix.
    let mut worst_null = 0.0f64;
    let mut worst_gap = f64::INFINITY;
    for k in 0..5 {
        let n = 10 + 10 * k;
        let gt: GroundTruth<f64> = generate_ground_truth(n, 3, 1.0, &mut rng)?;
        let obs = synthesize_observations(&gt, 0.0, 0.0, &mut rng, MirrorMode::Mirrored)?;
        let mut omega = build_omega(&obs).omega;
        if options.corrupt_omega {
            omega[(0, 1)] += 1.0;
            omega[(1, 0)] += 1.0;
        }
        let rel = (&omega * gt.stacked_rotations()).norm() / (omega.norm() * 3f64.sqrt());
        worst_null = worst_null.max(rel);
        let (values, _) = f64::symmetric_eigen(&omega)?;
        worst_gap = worst_gap.min(values[3] - 2.0 * n as f64);
    }
    rows.upper("omega_null_space", worst_null, 1e-8);
    rows.lower("omega_gap_minus_2n", worst_gap, -1e-6);

    // Decomposition identity and theory bounds.
    let mut worst_dec = 0.0f64;
    let mut bound_rows = Vec::new();
    for (k, d) in [2usize, 3].into_iter().enumerate() {
        let gt: GroundTruth<f64> = generate_ground_truth(10, d, 1.0, &mut rng)?;
        let obs = synthesize_observations(&gt, 0.5, 0.5, &mut rng, MirrorMode::Mirrored)?;
        let dec = build_ground_truth_decomposition(&gt, &obs)?;
        worst_dec = worst_dec.max(dec.decomposition_residual());
        if k == 1 {
            bound_rows.extend(check_norm_bounds(&dec, &gt));
            bound_rows.extend(check_eigen_gap(&dec)?);
        }
    }
    rows.upper("decomposition_identity", worst_dec, 1e-8);
    for c in bound_rows {
        rows.bound(c);
    }

    // Closed-form translations against the dense solve.
    let mut worst_t = 0.0f64;
    for n in 2..=8 {
        let gt: GroundTruth<f64> = generate_ground_truth(n, 3, 2.0, &mut rng)?;
        let obs = synthesize_observations(&gt, 0.5, 0.5, &mut rng, MirrorMode::Independent)?;
        let rots = (0..n).map(|_| random_rotation(&mut rng, 3)).collect::<Result<Vec<Rotation<f64>>>>()?;
        let closed = recover_translations(&rots, &build_t_hat(&obs))?;
        let oracle = translation_oracle(&rots, &obs);
        let scale = oracle.iter().map(|v| v.norm()).fold(f64::MIN_POSITIVE, f64::max);
        for (a, b) in closed.iter().zip(&oracle) {
            worst_t = worst_t.max((a - b).norm() / scale);
        }
    }
    rows.upper("translation_closed_form", worst_t, 1e-9);

    // Exact recovery.
    let gt: GroundTruth<f64> = generate_ground_truth(50, 3, 1.0, &mut rng)?;
    let obs = synthesize_observations(&gt, 0.0, 0.0, &mut rng, MirrorMode::Mirrored)?;
    let rep = error_report(&ase(&obs)?, &gt)?;
    rows.upper("exact_recovery_rotation_deg", rep.max_rotation_deg, 1e-6);
    rows.upper("exact_recovery_translation", rep.max_translation_err, 1e-8);

    // Pairwise registration.
    let scene = synthetic_scene::<f64, _>(2, 100, 50.0, &mut rng)?;
    let g = kabsch_pairwise(&scene.scans[1], &scene.scans[0])?;
    let truth = scene.poses[0].relative(&scene.poses[1])?;
    rows.upper("kabsch_exact", (g.homogeneous() - truth.homogeneous()).norm(), 1e-9);

    Ok(SelftestReport { rows: rows.0 })
}

fn random_motion(rng: &mut ChaCha8Rng) -> Result<RigidMotion<f64>> {
    let t = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
    RigidMotion::new(random_rotation(rng, 3)?, t)
}
