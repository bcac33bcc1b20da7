//! Complete graphs of pairwise scan motions.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{RigidMotion, Rotation};
use crate::registration::align::{icp_refine, kabsch_pairwise};
use crate::registration::cloud::PointCloud;
use crate::scalar::{cast, to_f64, Scalar};
use crate::synthesis::{observations_from_motions, ObservationSet};

/// `C_ij ~ G_i^{-1} G_j` for every ordered pair of scans; the motion `C_ij`
/// maps scan `j`'s frame into scan `i`'s.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph<T: Scalar> {
    edges: Vec<Vec<RigidMotion<T>>>,
}

impl<T: Scalar> PoseGraph<T> {
    /// Requires a complete square grid of 3-d motions with identity diagonal.
    pub fn new(grid: Vec<Vec<Option<RigidMotion<T>>>>) -> Result<Self> {
        let n = grid.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 scans, got {n}")));
        }
        let mut edges = Vec::with_capacity(n);
        for (i, row) in grid.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
            let mut out = Vec::with_capacity(n);
            for (j, cell) in row.into_iter().enumerate() {
                if i == j {
                    if let Some(g) = &cell {
                        let dev = (g.homogeneous() - DMatrix::identity(4, 4)).norm();
                        if to_f64(dev) > 1e-9 {
                            return Err(Error::InvalidInput(format!("diagonal entry {i} is not the identity")));
                        }
                    }
                    out.push(RigidMotion::identity(3));
                    continue;
                }
                let g = cell.ok_or(Error::IncompleteGraph(i, j))?;
                if g.dim() != 3 {
                    return Err(Error::DimensionMismatch { expected: 3, got: g.dim() });
                }
                out.push(g);
            }
            edges.push(out);
        }
        Ok(Self { edges })
    }

    /// The exact graph `C_ij = G_i^{-1} G_j` of the given scan poses.
    pub fn from_poses(poses: &[RigidMotion<T>]) -> Result<Self> {
        let grid = poses
            .iter()
            .map(|gi| poses.iter().map(|gj| gi.relative(gj).map(Some)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid)
    }

    /// Pairwise Kabsch alignment of positionally corresponding scans.
    pub fn from_correspondences(scans: &[PointCloud<T>]) -> Result<Self> {
        Self::from_pairs(scans.len(), |i, j| kabsch_pairwise(&scans[j], &scans[i]))
    }

    /// Refines every edge with ICP, starting from the current motion.
    pub fn refine_with_icp(&self, scans: &[PointCloud<T>], max_iters: usize, tol: f64) -> Result<Self> {
        if scans.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: scans.len() });
        }
        Self::from_pairs(self.n(), |i, j| {
            Ok(icp_refine(&scans[j], &scans[i], &self.edges[i][j], max_iters, tol)?.motion)
        })
    }

    fn from_pairs(n: usize, f: impl Fn(usize, usize) -> Result<RigidMotion<T>> + Sync) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
        let motions = pairs.par_iter().map(|&(i, j)| f(i, j)).collect::<Result<Vec<_>>>()?;
        let mut grid: Vec<Vec<Option<RigidMotion<T>>>> = vec![vec![None; n]; n];
        for ((i, j), g) in pairs.into_iter().zip(motions) {
            grid[i][j] = Some(g);
        }
        Self::new(grid)
    }

    pub fn n(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, i: usize, j: usize) -> &RigidMotion<T> {
        &self.edges[i][j]
    }

    pub fn to_observations(&self) -> Result<ObservationSet<T>> {
        let grid: Vec<Vec<Option<RigidMotion<T>>>> =
            self.edges.iter().map(|row| row.iter().cloned().map(Some).collect()).collect();
        observations_from_motions(&grid)
    }

    /// CSV with header `i,j,r00..r22,t0,t1,t2`, one row per off-diagonal pair.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j,r00,r01,r02,r10,r11,r12,r20,r21,r22,t0,t1,t2")?;
        for (i, row) in self.edges.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                if i == j {
                    continue;
                }
                write!(w, "{i},{j}")?;
                let r = g.rotation.matrix();
                for a in 0..3 {
                    for b in 0..3 {
                        write!(w, ",{:e}", to_f64(r[(a, b)]))?;
                    }
                }
                for k in 0..3 {
                    write!(w, ",{:e}", to_f64(g.translation[k]))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rows: Vec<(usize, usize, RigidMotion<T>)> = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = k + 1;
            if k == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 14 {
                return Err(Error::Parse { line: lineno, msg: format!("expected 14 fields, found {}", fields.len()) });
            }
            let bad = |f: &str| Error::Parse { line: lineno, msg: format!("bad field '{f}'") };
            let i: usize = fields[0].parse().map_err(|_| bad(fields[0]))?;
            let j: usize = fields[1].parse().map_err(|_| bad(fields[1]))?;
            let nums = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>().map(cast::<T>).map_err(|_| bad(f)))
                .collect::<Result<Vec<T>>>()?;
            let rotation = Rotation::new(DMatrix::from_row_slice(3, 3, &nums[..9]))
                .map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
            rows.push((i, j, RigidMotion::new(rotation, DVector::from_column_slice(&nums[9..]))?));
        }
        let n = rows.iter().map(|(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
        let mut grid: Vec<Vec<Option<RigidMotion<T>>>> = vec![vec![None; n]; n];
        for (i, j, g) in rows {
            grid[i][j] = Some(g);
        }
        Self::new(grid)
    }
}

/// Applies independent noise to every off-diagonal edge: the rotation is
/// composed with a rotation by an angle uniform in `[0, max_angle_deg]`
/// about a uniformly random axis, and the translation gets
/// `N(0, trans_sigma^2 I)` noise. Edges are visited in row-major order.
pub fn perturb_pose_graph<T: Scalar, R: Rng + ?Sized>(
    truth: &PoseGraph<T>,
    max_angle_deg: f64,
    trans_sigma: f64,
    rng: &mut R,
) -> Result<PoseGraph<T>> {
    let mut edges = truth.edges.clone();
    for (i, row) in edges.iter_mut().enumerate() {
        for (j, g) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            let axis = loop {
                let v = DVector::from_fn(3, |_, _| cast::<T>(rng.sample::<f64, _>(StandardNormal)));
                if v.norm() > cast(1e-12) {
                    break v;
                }
            };
            let angle = rng.random_range(0.0..=max_angle_deg).to_radians();
            let kick = Rotation::axis_angle(&axis, cast(angle))?;
            g.rotation = g.rotation.mul(&kick);
            for k in 0..3 {
                g.translation[k] += cast::<T>(trans_sigma * rng.sample::<f64, _>(StandardNormal));
            }
        }
    }
    Ok(PoseGraph { edges })
}
