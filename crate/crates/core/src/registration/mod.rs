//! Multiple point-set registration: pairwise scan motions are synchronized
//! and every scan is mapped into one common frame.
//!
//! Scan `i` holds points in its own frame; `G_i` maps them to the world, so
//! the pairwise motion `C_ij = G_i^{-1} G_j` takes scan `j` onto scan `i`.

mod align;
mod cloud;
mod pose_graph;

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

pub use align::{icp_refine, kabsch_pairwise, IcpOutcome, NearestNeighbors};
pub use cloud::{load_ply, read_ply, save_ply, write_ply, PointCloud};
pub use pose_graph::{perturb_pose_graph, PoseGraph};

use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimateSet, EstimatorOptions, Method};
use crate::geometry::{random_rotation, RigidMotion};
use crate::scalar::{cast, Scalar};

/// Output of [`register_scans`].
#[derive(Debug, Clone)]
pub struct Registration<T: Scalar> {
    pub estimate: EstimateSet<T>,
    pub merged: PointCloud<T>,
}

/// Synchronizes `graph` with `method` and merges the scans in the
/// estimated common frame.
pub fn register_scans<T: Scalar>(
    scans: &[PointCloud<T>],
    graph: &PoseGraph<T>,
    method: Method,
) -> Result<Registration<T>> {
    if scans.len() != graph.n() {
        return Err(Error::DimensionMismatch { expected: graph.n(), got: scans.len() });
    }
    let estimate = estimate(&graph.to_observations()?, method, &EstimatorOptions::default())?;
    let merged = merge_scans(scans, &estimate.motions)?;
    Ok(Registration { estimate, merged })
}

/// Concatenation of every scan mapped by its pose.
pub fn merge_scans<T: Scalar>(scans: &[PointCloud<T>], poses: &[RigidMotion<T>]) -> Result<PointCloud<T>> {
    if scans.len() != poses.len() {
        return Err(Error::DimensionMismatch { expected: scans.len(), got: poses.len() });
    }
    let moved = scans.iter().zip(poses).map(|(s, g)| s.transformed(g)).collect::<Result<Vec<_>>>()?;
    PointCloud::concat(&moved, "merged")
}

/// A synthetic acquisition: one shape seen from several poses with exact
/// point correspondences.
#[derive(Debug, Clone)]
pub struct SyntheticScene<T: Scalar> {
    pub world: PointCloud<T>,
    pub poses: Vec<RigidMotion<T>>,
    pub scans: Vec<PointCloud<T>>,
}

/// Samples `n_points` on an ellipsoid with semi-axes 80, 50 and 30 mm
/// (plus 1 mm radial roughness) and `n_scans` poses with uniformly random
/// rotations and translations of standard deviation `translation_scale`.
pub fn synthetic_scene<T: Scalar, R: Rng + ?Sized>(
    n_scans: usize,
    n_points: usize,
    translation_scale: f64,
    rng: &mut R,
) -> Result<SyntheticScene<T>> {
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let mut v = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
        while v.norm() < 1e-9 {
            v = Vector3::from_fn(|_, _| rng.sample(StandardNormal));
        }
        let radial = 1.0 + rng.sample::<f64, _>(StandardNormal) / 50.0;
        let p = v.normalize().component_mul(&Vector3::new(80.0, 50.0, 30.0)) * radial;
        points.push(p.map(cast::<T>));
    }
    let world = PointCloud::new(points, "world")?;
    let mut poses = Vec::with_capacity(n_scans);
    let mut scans = Vec::with_capacity(n_scans);
    for k in 0..n_scans {
        let t = DVector::from_fn(3, |_, _| cast::<T>(translation_scale * rng.sample::<f64, _>(StandardNormal)));
        let g = RigidMotion::new(random_rotation(rng, 3)?, t)?;
        let mut scan = world.transformed(&g.invert())?;
        scan.label = format!("scan{k}");
        scans.push(scan);
        poses.push(g);
    }
    Ok(SyntheticScene { world, poses, scans })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::align_motions;
    use crate::geometry::geodesic_angle_deg;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// RMS between the merged estimate and the ground-truth merge, after
    /// moving the truth into the estimate's gauge.
    fn merged_rms(reg: &Registration<f64>, scene: &SyntheticScene<f64>) -> f64 {
        let q = align_motions(&reg.estimate.motions, &scene.poses).unwrap();
        let truth: Vec<_> = scene.poses.iter().map(|g| q.compose(g).unwrap()).collect();
        merge_scans(&scene.scans, &truth).unwrap().rms_distance(&reg.merged).unwrap()
    }

    #[test]
    fn exact_graph_merges_exactly() {
        let scene = synthetic_scene::<f64, _>(5, 500, 50.0, &mut rng(1)).unwrap();
        let graph = PoseGraph::from_correspondences(&scene.scans).unwrap();
        let mut estimates = Vec::new();
        for method in [Method::Ase, Method::TwoStage, Method::NaiveProjection { sign_flip: true }] {
            let reg = register_scans(&scene.scans, &graph, method).unwrap();
            assert!(merged_rms(&reg, &scene) < 1e-8);
            estimates.push(reg.estimate);
        }
        // All methods agree once their gauges are aligned.
        for other in &estimates[1..] {
            let q = align_motions(&other.motions, &estimates[0].motions).unwrap();
            for (a, b) in estimates[0].motions.iter().zip(&other.motions) {
                assert!((q.compose(a).unwrap().homogeneous() - b.homogeneous()).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn icp_refinement_keeps_exact_graph() {
        let scene = synthetic_scene::<f64, _>(3, 300, 50.0, &mut rng(2)).unwrap();
        let graph = PoseGraph::from_correspondences(&scene.scans).unwrap();
        let refined = graph.refine_with_icp(&scene.scans, 10, 1e-10).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((refined.edge(i, j).homogeneous() - graph.edge(i, j).homogeneous()).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn synchronization_reduces_perturbation() {
        for seed in 0..25 {
            let mut r = rng(100 + seed);
            let scene = synthetic_scene::<f64, _>(5, 500, 50.0, &mut r).unwrap();
            let truth = PoseGraph::from_correspondences(&scene.scans).unwrap();
            let noisy = perturb_pose_graph(&truth, 8.0, 0.8, &mut r).unwrap();
            let mut applied = 0.0;
            for i in 0..5 {
                for j in (0..5).filter(|&j| j != i) {
                    applied += geodesic_angle_deg(&noisy.edge(i, j).rotation, &truth.edge(i, j).rotation).unwrap();
                }
            }
            applied /= 20.0;
            let reg = register_scans(&scene.scans, &noisy, Method::Ase).unwrap();
            let q = align_motions(&reg.estimate.motions, &scene.poses).unwrap();
            let err = reg
                .estimate
                .motions
                .iter()
                .zip(&scene.poses)
                .map(|(g_hat, g)| geodesic_angle_deg(&g_hat.rotation, &q.compose(g).unwrap().rotation).unwrap())
                .sum::<f64>()
                / 5.0;
            assert!(err < applied, "seed {seed}: {err} vs {applied}");
        }
    }

    #[test]
    fn size_mismatch_rejected() {
        let scene = synthetic_scene::<f64, _>(3, 50, 50.0, &mut rng(3)).unwrap();
        let graph = PoseGraph::from_correspondences(&scene.scans).unwrap();
        assert!(register_scans(&scene.scans[..2], &graph, Method::Ase).is_err());
    }
}
