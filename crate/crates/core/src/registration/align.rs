//! Pairwise rigid alignment: closed-form Kabsch and ICP refinement.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{project_so, RigidMotion};
use crate::registration::cloud::{motion_parts, to_dvector, PointCloud};
use crate::scalar::{to_f64, Scalar};

/// The motion `g` minimizing `sum_k |g(a_k) - b_k|^2` over positional
/// correspondences, with `g(x) = R^T x + t`.
pub fn kabsch_pairwise<T: Scalar>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<RigidMotion<T>> {
    kabsch_points(&a.points, &b.points)
}

fn kabsch_points<T: Scalar>(a: &[Vector3<T>], b: &[Vector3<T>]) -> Result<RigidMotion<T>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("{} correspondences, need at least 3", a.len())));
    }
    let inv = T::one() / T::from_usize(a.len()).expect("count fits scalar");
    let ca = a.iter().fold(Vector3::zeros(), |s, p| s + p) * inv;
    let cb = b.iter().fold(Vector3::zeros(), |s, p| s + p) * inv;
    let mut cov = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        cov += (q - cb) * (p - ca).transpose();
    }
    // Rank below d - 1 leaves the rotation undetermined.
    let mut sv: Vec<T> = cov.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).expect("finite singular values"));
    if !(sv[1] > sv[0] * T::default_epsilon().sqrt()) {
        return Err(Error::DegenerateGeometry(format!(
            "correspondences are collinear (singular values {}, {})",
            to_f64(sv[0]),
            to_f64(sv[1])
        )));
    }
    let m = project_so(&DMatrix::from_column_slice(3, 3, cov.as_slice()))?;
    let m3 = Matrix3::from_column_slice(m.matrix().as_slice());
    RigidMotion::new(m.transpose(), to_dvector(&(cb - m3 * ca)))
}

/// Exact nearest-neighbour queries over a fixed point set: brute force up to
/// [`NearestNeighbors::EXHAUSTIVE_LIMIT`] points, a uniform grid above.
///
/// Ties resolve to the lowest index either way.
pub struct NearestNeighbors {
    points: Vec<Vector3<f64>>,
    grid: Option<Grid>,
}

struct Grid {
    origin: Vector3<f64>,
    cell: f64,
    dims: [i64; 3],
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl NearestNeighbors {
    pub const EXHAUSTIVE_LIMIT: usize = 2000;

    pub fn new<T: Scalar>(cloud: &PointCloud<T>) -> Self {
        Self::with_limit(cloud, Self::EXHAUSTIVE_LIMIT)
    }

    /// Builds the grid whenever the cloud has more than `limit` points.
    pub fn with_limit<T: Scalar>(cloud: &PointCloud<T>, limit: usize) -> Self {
        let points: Vec<Vector3<f64>> = cloud.points.iter().map(|p| p.map(to_f64)).collect();
        let grid = (points.len() > limit).then(|| Grid::build(&points));
        Self { points, grid }
    }

    /// `(index, squared distance)` of the closest point to `q`.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        match &self.grid {
            None => self.scan(q, 0..self.points.len(), (usize::MAX, f64::INFINITY)),
            Some(g) => g.nearest(&self.points, q),
        }
    }

    fn scan(&self, q: &Vector3<f64>, idx: impl Iterator<Item = usize>, mut best: (usize, f64)) -> (usize, f64) {
        for i in idx {
            best = closer(best, (i, (self.points[i] - q).norm_squared()));
        }
        best
    }
}

fn closer(a: (usize, f64), b: (usize, f64)) -> (usize, f64) {
    if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
        b
    } else {
        a
    }
}

impl Grid {
    fn build(points: &[Vector3<f64>]) -> Self {
        let lo = points.iter().fold(Vector3::repeat(f64::INFINITY), |m, p| m.inf(p));
        let hi = points.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
        let extent = (hi - lo).map(|e| e.max(1e-9));
        // Roughly two points per occupied cell for a volume-filling cloud.
        let cell = (extent.x * extent.y * extent.z * 2.0 / points.len() as f64).cbrt().max(extent.max() / 1024.0);
        let dims = [0, 1, 2].map(|k| (extent[k] / cell).floor() as i64 + 1);
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut grid = Self { origin: lo, cell, dims, cells: HashMap::new() };
        for (i, p) in points.iter().enumerate() {
            cells.entry(grid.key(p)).or_default().push(i);
        }
        grid.cells = cells;
        grid
    }

    fn key(&self, p: &Vector3<f64>) -> [i64; 3] {
        [0, 1, 2].map(|k| (((p[k] - self.origin[k]) / self.cell).floor() as i64).clamp(0, self.dims[k] - 1))
    }

    fn nearest(&self, points: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
        let home = self.key(q);
        let max_r = self.dims.iter().copied().max().unwrap_or(1);
        let mut best = (usize::MAX, f64::INFINITY);
        for r in 0..=max_r {
            for x in home[0] - r..=home[0] + r {
                for y in home[1] - r..=home[1] + r {
                    for z in home[2] - r..=home[2] + r {
                        let on_shell = (x - home[0]).abs() == r || (y - home[1]).abs() == r || (z - home[2]).abs() == r;
                        if !on_shell {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&[x, y, z]) {
                            for &i in ids {
                                best = closer(best, (i, (points[i] - q).norm_squared()));
                            }
                        }
                    }
                }
            }
            // Unvisited points lie past a face of the visited box that still
            // has cells behind it.
            let mut gap = f64::INFINITY;
            for k in 0..3 {
                if home[k] - r > 0 {
                    let face = self.origin[k] + (home[k] - r) as f64 * self.cell;
                    gap = gap.min((q[k] - face).max(0.0));
                }
                if home[k] + r + 1 < self.dims[k] {
                    let face = self.origin[k] + (home[k] + r + 1) as f64 * self.cell;
                    gap = gap.min((face - q[k]).max(0.0));
                }
            }
            // Strict so that an equidistant lower index further out still wins.
            // An exact hit cannot tie with another cell: equal points share one.
            if gap.is_infinite() || best.1 < gap * gap || best.1 == 0.0 {
                break;
            }
        }
        best
    }
}

/// Result of [`icp_refine`].
#[derive(Debug, Clone)]
pub struct IcpOutcome<T: Scalar> {
    pub motion: RigidMotion<T>,
    /// Nearest-neighbour RMS after each accepted step, starting with the
    /// initial guess.
    pub rms_history: Vec<f64>,
}

impl<T: Scalar> IcpOutcome<T> {
    pub fn rms(&self) -> f64 {
        *self.rms_history.last().expect("history starts with the initial RMS")
    }

    pub fn iterations(&self) -> usize {
        self.rms_history.len() - 1
    }
}

fn matched_rms<T: Scalar>(
    a: &PointCloud<T>,
    b: &PointCloud<T>,
    index: &NearestNeighbors,
    g: &RigidMotion<T>,
) -> Result<(f64, Vec<Vector3<T>>)> {
    let (m, t) = motion_parts(g)?;
    let mut sum = 0.0;
    let mut matched = Vec::with_capacity(a.len());
    for p in &a.points {
        let q = (m * p + t).map(to_f64);
        let (i, d2) = index.nearest(&q);
        sum += d2;
        matched.push(b.points[i]);
    }
    Ok(((sum / a.len() as f64).sqrt(), matched))
}

/// Point-to-point ICP aligning `a` onto `b` from `init`.
///
/// Stops after `max_iters` steps, when the RMS improves by less than `tol`,
/// or when a step would increase the RMS (that step is discarded), so the
/// RMS history never increases.
pub fn icp_refine<T: Scalar>(
    a: &PointCloud<T>,
    b: &PointCloud<T>,
    init: &RigidMotion<T>,
    max_iters: usize,
    tol: f64,
) -> Result<IcpOutcome<T>> {
    let index = NearestNeighbors::new(b);
    let (mut rms, mut matched) = matched_rms(a, b, &index, init)?;
    let mut motion = init.clone();
    let mut rms_history = vec![rms];
    for _ in 0..max_iters {
        let candidate = kabsch_points(&a.points, &matched)?;
        let (next_rms, next_matched) = matched_rms(a, b, &index, &candidate)?;
        if next_rms > rms {
            break;
        }
        let improvement = rms - next_rms;
        motion = candidate;
        rms = next_rms;
        matched = next_matched;
        rms_history.push(rms);
        if improvement < tol {
            break;
        }
    }
    Ok(IcpOutcome { motion, rms_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_angle_deg, random_rotation, Rotation};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_cloud(r: &mut ChaCha8Rng, n: usize) -> PointCloud<f64> {
        let pts = (0..n)
            .map(|_| Vector3::new(r.random_range(-80.0..80.0), r.random_range(-50.0..50.0), r.random_range(-30.0..30.0)))
            .collect();
        PointCloud::new(pts, "a").unwrap()
    }

    fn random_motion(r: &mut ChaCha8Rng) -> RigidMotion<f64> {
        let t = DVector::from_fn(3, |_, _| r.sample::<f64, _>(StandardNormal) * 20.0);
        RigidMotion::new(random_rotation(r, 3).unwrap(), t).unwrap()
    }

    fn motion_error(a: &RigidMotion<f64>, b: &RigidMotion<f64>) -> f64 {
        (a.homogeneous() - b.homogeneous()).norm()
    }

    fn fit_rms(a: &PointCloud<f64>, b: &PointCloud<f64>, g: &RigidMotion<f64>) -> f64 {
        a.transformed(g).unwrap().rms_distance(b).unwrap()
    }

    #[test]
    fn identical_clouds_give_identity() {
        let a = random_cloud(&mut rng(1), 50);
        let g = kabsch_pairwise(&a, &a).unwrap();
        assert!(motion_error(&g, &RigidMotion::identity(3)) < 1e-12);
    }

    #[test]
    fn recovers_known_motion() {
        let mut r = rng(2);
        for _ in 0..20 {
            let a = random_cloud(&mut r, 40);
            let g0 = random_motion(&mut r);
            let b = a.transformed(&g0).unwrap();
            assert!(motion_error(&kabsch_pairwise(&a, &b).unwrap(), &g0) < 1e-9);
        }
    }

    #[test]
    fn optimal_against_local_grid_search() {
        let mut r = rng(3);
        let a = random_cloud(&mut r, 60);
        let g0 = random_motion(&mut r);
        let mut b = a.transformed(&g0).unwrap();
        for p in &mut b.points {
            *p += Vector3::from_fn(|_, _| 0.1 * r.sample::<f64, _>(StandardNormal));
        }
        let g = kabsch_pairwise(&a, &b).unwrap();
        let best = fit_rms(&a, &b, &g);
        // Perturb the rotation on a grid of axis-angle offsets; for each the
        // optimal translation matches the centroids.
        let (ca, cb) = (a.centroid(), b.centroid());
        let mut grid_best = f64::INFINITY;
        for h in [1e-2, 1e-3, 1e-4] {
            for i in -1..=1 {
                for j in -1..=1 {
                    for k in -1..=1 {
                        let w = DVector::from_vec(vec![i as f64 * h, j as f64 * h, k as f64 * h]);
                        let rot = if w.norm() == 0.0 {
                            g.rotation.clone()
                        } else {
                            g.rotation.mul(&Rotation::axis_angle(&w, w.norm()).unwrap())
                        };
                        let m = Matrix3::from_fn(|x, y| rot.matrix()[(y, x)]);
                        let cand = RigidMotion::new(rot, to_dvector(&(cb - m * ca))).unwrap();
                        grid_best = grid_best.min(fit_rms(&a, &b, &cand));
                    }
                }
            }
        }
        assert!(best <= grid_best + 1e-6, "{best} vs {grid_best}");
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<_> = (0..10).map(|k| Vector3::new(k as f64, 2.0 * k as f64, 0.0)).collect();
        let a = PointCloud::new(pts, "line").unwrap();
        assert!(matches!(kabsch_pairwise(&a, &a), Err(Error::DegenerateGeometry(_))));
        let two = PointCloud::<f64>::new(vec![Vector3::zeros(), Vector3::x()], "pair").unwrap();
        assert!(kabsch_pairwise(&two, &two).is_err());
    }

    #[test]
    fn grid_search_matches_brute_force() {
        let mut r = rng(4);
        let cloud = random_cloud(&mut r, 3000);
        let brute = NearestNeighbors::with_limit(&cloud, usize::MAX);
        let grid = NearestNeighbors::new(&cloud);
        assert!(grid.grid.is_some());
        for _ in 0..2000 {
            let q = Vector3::new(r.random_range(-150.0..150.0), r.random_range(-90.0..90.0), r.random_range(-60.0..60.0));
            assert_eq!(brute.nearest(&q), grid.nearest(&q));
        }
        for p in cloud.points.iter().take(100) {
            assert_eq!(brute.nearest(p), grid.nearest(p));
        }
    }

    #[test]
    fn icp_at_truth_returns_init() {
        let mut r = rng(5);
        let a = random_cloud(&mut r, 300);
        let g0 = random_motion(&mut r);
        let b = a.transformed(&g0).unwrap();
        let out = icp_refine(&a, &b, &g0, 30, 1e-10).unwrap();
        assert!(motion_error(&out.motion, &g0) < 1e-9);
        assert!(out.rms() < 1e-9);
    }

    #[test]
    fn zero_iterations_return_init() {
        let mut r = rng(6);
        let a = random_cloud(&mut r, 100);
        let b = a.transformed(&random_motion(&mut r)).unwrap();
        let init = random_motion(&mut r);
        let out = icp_refine(&a, &b, &init, 0, 1e-10).unwrap();
        assert_eq!(out.motion, init);
        assert_eq!(out.iterations(), 0);
    }

    #[test]
    fn icp_converges_from_small_perturbation() {
        let mut r = rng(7);
        for _ in 0..3 {
            let a = random_cloud(&mut r, 500);
            let g0 = random_motion(&mut r);
            let b = a.transformed(&g0).unwrap();
            let mut axis = DVector::from_fn(3, |_, _| r.sample::<f64, _>(StandardNormal));
            axis /= axis.norm();
            let kick = Rotation::axis_angle(&axis, 2f64.to_radians()).unwrap();
            let mut shift = DVector::from_fn(3, |_, _| r.sample::<f64, _>(StandardNormal));
            shift *= 0.5 / shift.norm();
            let init = RigidMotion::new(g0.rotation.mul(&kick), &g0.translation + shift).unwrap();
            let out = icp_refine(&a, &b, &init, 100, 1e-12).unwrap();
            assert!(geodesic_angle_deg(&out.motion.rotation, &g0.rotation).unwrap() < 0.1);
            assert!(out.rms_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn icp_rms_is_monotone_from_far_start() {
        let mut r = rng(8);
        let a = random_cloud(&mut r, 400);
        let b = a.transformed(&random_motion(&mut r)).unwrap();
        let out = icp_refine(&a, &b, &RigidMotion::identity(3), 50, 0.0).unwrap();
        assert!(out.rms_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(out.rms() <= out.rms_history[0] + 1e-12);
    }
}
