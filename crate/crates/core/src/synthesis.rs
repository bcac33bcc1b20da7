//! Ground truth and noisy pairwise observations under the Gaussian model.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{random_rotation, stack_rotations, RigidMotion, Rotation};
use crate::scalar::{cast, to_f64, Scalar};

/// Ground-truth rigid motions with translations centred at the origin.
#[derive(Debug, Clone)]
pub struct GroundTruth<T: Scalar> {
    rotations: Vec<Rotation<T>>,
    translations: Vec<DVector<T>>,
    max_translation_norm: T,
}

impl<T: Scalar> GroundTruth<T> {
    /// Builds a ground truth, recentering the translations so they sum to zero.
    pub fn new(rotations: Vec<Rotation<T>>, mut translations: Vec<DVector<T>>) -> Result<Self> {
        let n = rotations.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 motions, got {n}")));
        }
        if translations.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: translations.len() });
        }
        let d = rotations[0].dim();
        for (r, t) in rotations.iter().zip(&translations) {
            if r.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: r.dim() });
            }
            if t.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: t.len() });
            }
        }
        let mean = translations.iter().fold(DVector::zeros(d), |acc, t| acc + t) / cast::<T>(n as f64);
        for t in &mut translations {
            *t -= &mean;
        }
        let max_translation_norm = translations.iter().map(|t| t.norm()).fold(T::zero(), |a, b| a.max(b));
        Ok(Self { rotations, translations, max_translation_norm })
    }

    pub fn from_motions(motions: Vec<RigidMotion<T>>) -> Result<Self> {
        let (rotations, translations) = motions.into_iter().map(|g| (g.rotation, g.translation)).unzip();
        Self::new(rotations, translations)
    }

    pub fn n(&self) -> usize {
        self.rotations.len()
    }

    pub fn d(&self) -> usize {
        self.rotations[0].dim()
    }

    pub fn rotations(&self) -> &[Rotation<T>] {
        &self.rotations
    }

    pub fn translations(&self) -> &[DVector<T>] {
        &self.translations
    }

    /// `M_t = max_i |t*_i|`.
    pub fn max_translation_norm(&self) -> T {
        self.max_translation_norm
    }

    pub fn motion(&self, i: usize) -> RigidMotion<T> {
        RigidMotion { rotation: self.rotations[i].clone(), translation: self.translations[i].clone() }
    }

    pub fn motions(&self) -> Vec<RigidMotion<T>> {
        (0..self.n()).map(|i| self.motion(i)).collect()
    }

    /// The `nd x d` block column `R* = [R*_1; ..; R*_n]`.
    pub fn stacked_rotations(&self) -> DMatrix<T> {
        stack_rotations(&self.rotations)
    }

    /// Noiseless comparison `s*_ij = R*_i (t*_j - t*_i)`.
    pub fn relative_translation(&self, i: usize, j: usize) -> DVector<T> {
        self.rotations[i].matrix() * (&self.translations[j] - &self.translations[i])
    }

    /// Noiseless comparison block `S*_ij = R*_i R*_j^T`.
    pub fn relative_rotation(&self, i: usize, j: usize) -> DMatrix<T> {
        self.rotations[i].matrix() * self.rotations[j].matrix().transpose()
    }
}

/// Haar rotations and Gaussian translations (std `translation_scale` per
/// coordinate), recentred to sum to zero.
pub fn generate_ground_truth<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    d: usize,
    translation_scale: f64,
    rng: &mut R,
) -> Result<GroundTruth<T>> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need n >= 2, got {n}")));
    }
    if !(translation_scale >= 0.0) {
        return Err(Error::InvalidInput(format!("translation scale must be >= 0, got {translation_scale}")));
    }
    let mut rotations = Vec::with_capacity(n);
    let mut translations = Vec::with_capacity(n);
    for _ in 0..n {
        rotations.push(random_rotation(rng, d)?);
        translations.push(gaussian_vector(rng, d, translation_scale));
    }
    GroundTruth::new(rotations, translations)
}

/// How noise on the `(j, i)` comparison relates to the `(i, j)` one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MirrorMode {
    /// `W^R_ji = W^R_ij^T` and `w^t_ji = -w^t_ij`; the assembled `S` is symmetric.
    Mirrored,
    /// Fresh noise for every ordered pair `i != j`.
    Independent,
}

impl MirrorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MirrorMode::Mirrored => "mirrored",
            MirrorMode::Independent => "independent",
        }
    }
}

impl std::str::FromStr for MirrorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mirrored" => Ok(MirrorMode::Mirrored),
            "independent" => Ok(MirrorMode::Independent),
            other => Err(Error::InvalidInput(format!("unknown mirror mode {other:?}"))),
        }
    }
}

/// Complete set of pairwise observations `(S_ij, s_ij)`.
///
/// Stored in block form: `S` is `nd x nd` with `(i, j)` block `S_ij`, and
/// `s` is `nd x n` with `(i, j)` block the column vector `s_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet<T: Scalar> {
    n: usize,
    d: usize,
    rotations: DMatrix<T>,
    translations: DMatrix<T>,
    /// Rotation noise std. `None` when the observations came from elsewhere.
    pub sigma1: Option<T>,
    /// Translation noise std. `None` when unknown.
    pub sigma2: Option<T>,
    pub mirror_mode: MirrorMode,
}

impl<T: Scalar> ObservationSet<T> {
    /// Assembles an observation set from its block matrices. Diagonal blocks
    /// are reset to `S_ii = I`, `s_ii = 0`.
    pub fn from_blocks(
        d: usize,
        mut rotations: DMatrix<T>,
        mut translations: DMatrix<T>,
        sigma1: Option<T>,
        sigma2: Option<T>,
        mirror_mode: MirrorMode,
    ) -> Result<Self> {
        if d == 0 || rotations.nrows() % d != 0 || rotations.nrows() != rotations.ncols() {
            return Err(Error::InvalidInput(format!(
                "rotation block matrix must be nd x nd, got {} x {}",
                rotations.nrows(),
                rotations.ncols()
            )));
        }
        let n = rotations.nrows() / d;
        if translations.shape() != (n * d, n) {
            return Err(Error::InvalidInput(format!(
                "translation block matrix must be {} x {}, got {:?}",
                n * d,
                n,
                translations.shape()
            )));
        }
        for i in 0..n {
            rotations.view_mut((i * d, i * d), (d, d)).fill_with_identity();
            translations.view_mut((i * d, i), (d, 1)).fill(T::zero());
        }
        Ok(Self { n, d, rotations, translations, sigma1, sigma2, mirror_mode })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `S_ij`.
    pub fn rotation_block(&self, i: usize, j: usize) -> DMatrixView<'_, T> {
        self.rotations.view((i * self.d, j * self.d), (self.d, self.d))
    }

    /// `s_ij`.
    pub fn translation(&self, i: usize, j: usize) -> DVectorView<'_, T> {
        self.translations.generic_view((i * self.d, j), (nalgebra::Dyn(self.d), nalgebra::Const::<1>))
    }

    /// The `nd x nd` block matrix `S`.
    pub fn rotation_matrix(&self) -> &DMatrix<T> {
        &self.rotations
    }

    /// The `nd x n` block matrix `s`.
    pub fn translation_matrix(&self) -> &DMatrix<T> {
        &self.translations
    }

    /// Largest entry-wise asymmetry of `S`, `max |S - S^T|`.
    pub fn rotation_asymmetry(&self) -> f64 {
        to_f64((&self.rotations - self.rotations.transpose()).amax())
    }

    /// Writes the CSV dump: a header row `n,d,sigma1,sigma2,mirror_mode`,
    /// its values, a column header, then one row per ordered pair `(i, j)`
    /// holding `S_ij` row-major followed by `s_ij`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let sigma = |s: Option<T>| s.map_or_else(|| "nan".to_string(), |v| v.to_string());
        writeln!(w, "n,d,sigma1,sigma2,mirror_mode")?;
        writeln!(
            w,
            "{},{},{},{},{}",
            self.n,
            self.d,
            sigma(self.sigma1),
            sigma(self.sigma2),
            self.mirror_mode.as_str()
        )?;
        let d = self.d;
        let mut header = vec!["i".to_string(), "j".to_string()];
        header.extend((0..d * d).map(|k| format!("S{}{}", k / d, k % d)));
        header.extend((0..d).map(|k| format!("s{k}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n {
            for j in 0..self.n {
                let mut fields = vec![i.to_string(), j.to_string()];
                let block = self.rotation_block(i, j);
                for r in 0..d {
                    for c in 0..d {
                        fields.push(block[(r, c)].to_string());
                    }
                }
                fields.extend(self.translation(i, j).iter().map(|v| v.to_string()));
                writeln!(w, "{}", fields.join(","))?;
            }
        }
        Ok(())
    }

    /// Reads the format produced by [`ObservationSet::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter_map(|(k, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((k + 1, other)),
        });
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((k, Ok(l))) => Ok((k, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::Parse { line: 0, msg: format!("unexpected end of input, expected {what}") }),
            }
        };
        let (k, header) = next("header")?;
        if header.trim() != "n,d,sigma1,sigma2,mirror_mode" {
            return Err(Error::Parse { line: k, msg: format!("bad header {header:?}") });
        }
        let (k, meta) = next("metadata")?;
        let meta: Vec<&str> = meta.split(',').map(str::trim).collect();
        if meta.len() != 5 {
            return Err(Error::Parse { line: k, msg: "expected 5 metadata fields".into() });
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse { line: k, msg: e.to_string() });
        let n = parse_usize(meta[0])?;
        let d = parse_usize(meta[1])?;
        let sigma = |s: &str| -> Result<Option<T>> {
            let v = parse_f64(s, k)?;
            Ok((!v.is_nan()).then(|| cast(v)))
        };
        let (sigma1, sigma2) = (sigma(meta[2])?, sigma(meta[3])?);
        let mirror_mode = meta[4].parse()?;
        next("column header")?;
        let mut rotations = DMatrix::zeros(n * d, n * d);
        let mut translations = DMatrix::zeros(n * d, n);
        let mut seen = vec![false; n * n];
        for _ in 0..n * n {
            let (k, row) = next("pair row")?;
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != 2 + d * d + d {
                return Err(Error::Parse { line: k, msg: format!("expected {} fields", 2 + d * d + d) });
            }
            let idx = |s: &str| -> Result<usize> {
                let v = s.parse::<usize>().map_err(|e| Error::Parse { line: k, msg: e.to_string() })?;
                if v >= n {
                    return Err(Error::Parse { line: k, msg: format!("index {v} out of range") });
                }
                Ok(v)
            };
            let (i, j) = (idx(fields[0])?, idx(fields[1])?);
            seen[i * n + j] = true;
            for e in 0..d * d {
                rotations[(i * d + e / d, j * d + e % d)] = cast(parse_f64(fields[2 + e], k)?);
            }
            for e in 0..d {
                translations[(i * d + e, j)] = cast(parse_f64(fields[2 + d * d + e], k)?);
            }
        }
        if let Some(p) = seen.iter().position(|s| !s) {
            return Err(Error::IncompleteGraph(p / n, p % n));
        }
        Self::from_blocks(d, rotations, translations, sigma1, sigma2, mirror_mode)
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("{s:?}: {e}") })
}

fn gaussian_vector<T: Scalar, R: Rng + ?Sized>(rng: &mut R, d: usize, std: f64) -> DVector<T> {
    DVector::from_fn(d, |_, _| cast(std * rng.sample::<f64, _>(StandardNormal)))
}

fn gaussian_matrix<T: Scalar, R: Rng + ?Sized>(rng: &mut R, d: usize, std: f64) -> DMatrix<T> {
    DMatrix::from_fn(d, d, |_, _| cast(std * rng.sample::<f64, _>(StandardNormal)))
}

/// Noisy comparisons `S_ij = R*_i R*_j^T + W^R_ij`, `s_ij = R*_i (t*_j - t*_i) + w^t_ij`.
///
/// Noise is drawn pair by pair in row-major order (rotation block first),
/// over `i < j` in mirrored mode and over all `i != j` in independent mode.
pub fn synthesize_observations<T: Scalar, R: Rng + ?Sized>(
    gt: &GroundTruth<T>,
    sigma1: f64,
    sigma2: f64,
    rng: &mut R,
    mirror_mode: MirrorMode,
) -> Result<ObservationSet<T>> {
    if !(sigma1 >= 0.0 && sigma2 >= 0.0) {
        return Err(Error::InvalidInput(format!("noise levels must be >= 0, got ({sigma1}, {sigma2})")));
    }
    let (n, d) = (gt.n(), gt.d());
    let mut rotations = DMatrix::zeros(n * d, n * d);
    let mut translations = DMatrix::zeros(n * d, n);
    for i in 0..n {
        for j in 0..n {
            if i == j || (mirror_mode == MirrorMode::Mirrored && j < i) {
                continue;
            }
            let noise_r: DMatrix<T> = gaussian_matrix(rng, d, sigma1);
            let noise_t: DVector<T> = gaussian_vector(rng, d, sigma2);
            let s_ij = gt.relative_rotation(i, j) + &noise_r;
            let t_ij = gt.relative_translation(i, j) + &noise_t;
            if mirror_mode == MirrorMode::Mirrored {
                rotations.view_mut((j * d, i * d), (d, d)).copy_from(&s_ij.transpose());
                translations
                    .view_mut((j * d, i), (d, 1))
                    .copy_from(&(gt.relative_translation(j, i) - &noise_t));
            }
            rotations.view_mut((i * d, j * d), (d, d)).copy_from(&s_ij);
            translations.view_mut((i * d, j), (d, 1)).copy_from(&t_ij);
        }
    }
    ObservationSet::from_blocks(d, rotations, translations, Some(cast(sigma1)), Some(cast(sigma2)), mirror_mode)
}

/// Converts a complete grid of relative motions `C_ij` into observations.
///
/// `grid[i][j]` must be present for every `i != j`; diagonal entries are
/// ignored. The blocks are read off each motion's homogeneous form.
pub fn observations_from_motions<T: Scalar>(grid: &[Vec<Option<RigidMotion<T>>>]) -> Result<ObservationSet<T>> {
    let n = grid.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 scans, got {n}")));
    }
    let d = grid
        .iter()
        .flatten()
        .flatten()
        .map(RigidMotion::dim)
        .next()
        .ok_or(Error::IncompleteGraph(0, 1))?;
    let mut rotations = DMatrix::zeros(n * d, n * d);
    let mut translations = DMatrix::zeros(n * d, n);
    for (i, row) in grid.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: row.len() });
        }
        for (j, cell) in row.iter().enumerate() {
            if i == j {
                continue;
            }
            let g = cell.as_ref().ok_or(Error::IncompleteGraph(i, j))?;
            if g.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: g.dim() });
            }
            rotations.view_mut((i * d, j * d), (d, d)).copy_from(&g.rotation_block());
            translations.view_mut((i * d, j), (d, 1)).copy_from(&g.translation);
        }
    }
    ObservationSet::from_blocks(d, rotations, translations, None, None, MirrorMode::Independent)
}

/// Empirical sample standard deviation, used by the Monte-Carlo checks.
#[cfg(test)]
pub(crate) fn sample_std(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}
