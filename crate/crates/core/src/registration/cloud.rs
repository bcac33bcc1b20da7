//! Point clouds and the ASCII PLY subset used for scans.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::RigidMotion;
use crate::scalar::{cast, to_f64, Scalar};

/// A labelled set of points in R^3 (millimetres).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Scalar> {
    pub points: Vec<Vector3<T>>,
    pub label: String,
}

impl<T: Scalar> PointCloud<T> {
    /// Requires at least one point and finite coordinates.
    pub fn new(points: Vec<Vector3<T>>, label: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud is empty".into()));
        }
        if points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput("point cloud has non-finite coordinates".into()));
        }
        Ok(Self { points, label: label.into() })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<T> {
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
        sum / cast::<T>(self.points.len() as f64)
    }

    /// Every point mapped by `g` (`x -> R^T x + t`).
    pub fn transformed(&self, g: &RigidMotion<T>) -> Result<Self> {
        let (m, t) = motion_parts(g)?;
        Ok(Self { points: self.points.iter().map(|p| m * p + t).collect(), label: self.label.clone() })
    }

    /// Root-mean-square distance between positionally matched points.
    pub fn rms_distance(&self, other: &PointCloud<T>) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        let sum: f64 = self.points.iter().zip(&other.points).map(|(a, b)| to_f64((a - b).norm_squared())).sum();
        Ok((sum / self.len() as f64).sqrt())
    }

    /// Concatenation of several clouds.
    pub fn concat(clouds: &[PointCloud<T>], label: impl Into<String>) -> Result<Self> {
        Self::new(clouds.iter().flat_map(|c| c.points.iter().copied()).collect(), label)
    }
}

/// `(R^T, t)` of a 3-d motion as fixed-size matrices.
pub(crate) fn motion_parts<T: Scalar>(g: &RigidMotion<T>) -> Result<(Matrix3<T>, Vector3<T>)> {
    if g.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: g.dim() });
    }
    let r = g.rotation.matrix();
    let m = Matrix3::from_fn(|i, j| r[(j, i)]);
    Ok((m, Vector3::new(g.translation[0], g.translation[1], g.translation[2])))
}

pub(crate) fn to_dvector<T: Scalar>(v: &Vector3<T>) -> DVector<T> {
    DVector::from_column_slice(v.as_slice())
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

/// Reads the vertex positions of an ASCII PLY file.
pub fn load_ply<T: Scalar>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    let path = path.as_ref();
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    read_ply(BufReader::new(File::open(path)?), &label)
}

/// Parses ASCII PLY from a reader. A `comment label <name>` header line
/// overrides `default_label`.
pub fn read_ply<T: Scalar, R: BufRead>(reader: R, default_label: &str) -> Result<PointCloud<T>> {
    let mut lines = reader.lines().enumerate().map(|(k, l)| (k + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((k, Ok(l))) => Ok((k, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(Error::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") }),
        }
    };

    let (_, magic) = next("'ply'")?;
    if magic.trim() != "ply" {
        return Err(Error::Parse { line: 1, msg: "missing 'ply' magic".into() });
    }
    let mut label = default_label.to_string();
    let mut elements: Vec<Element> = Vec::new();
    let mut ascii = false;
    loop {
        let (k, line) = next("end_header")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["end_header"] => break,
            ["format", "ascii", _] => ascii = true,
            ["format", fmt, ..] => return Err(Error::Unsupported(format!("PLY format '{fmt}'"))),
            ["comment", "label", rest @ ..] => label = rest.join(" "),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::Parse { line: k, msg: format!("bad element count '{count}'") })?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new(), has_list: false });
            }
            ["property", "list", ..] => {
                let el = elements.last_mut().ok_or(Error::Parse { line: k, msg: "property before element".into() })?;
                el.has_list = true;
                el.properties.push(tokens.last().unwrap_or(&"").to_string());
            }
            ["property", _ty, name] => {
                let el = elements.last_mut().ok_or(Error::Parse { line: k, msg: "property before element".into() })?;
                el.properties.push(name.to_string());
            }
            _ => return Err(Error::Parse { line: k, msg: format!("malformed header line '{line}'") }),
        }
    }
    if !ascii {
        return Err(Error::Parse { line: 2, msg: "missing format line".into() });
    }
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or(Error::Parse { line: 0, msg: "no vertex element".into() })?;
    let vertex = &elements[vertex_pos];
    if vertex.has_list {
        return Err(Error::Unsupported("list properties on vertices".into()));
    }
    let column = |name: &str| {
        vertex
            .properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("vertex element has no '{name}' property") })
    };
    let (cx, cy, cz) = (column("x")?, column("y")?, column("z")?);

    let mut points = Vec::with_capacity(vertex.count);
    for (e_idx, el) in elements.iter().enumerate() {
        for _ in 0..el.count {
            let (k, line) = next(&format!("{} '{}' rows", el.count, el.name))?;
            if e_idx != vertex_pos {
                continue;
            }
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() != el.properties.len() {
                return Err(Error::Parse {
                    line: k,
                    msg: format!("expected {} values, found {}", el.properties.len(), values.len()),
                });
            }
            let parse = |c: usize| -> Result<T> {
                values[c]
                    .parse::<f64>()
                    .map(cast::<T>)
                    .map_err(|_| Error::Parse { line: k, msg: format!("bad number '{}'", values[c]) })
            };
            points.push(Vector3::new(parse(cx)?, parse(cy)?, parse(cz)?));
        }
    }
    while let Ok((k, line)) = next("") {
        if !line.trim().is_empty() {
            return Err(Error::Parse { line: k, msg: "more rows than the header declares".into() });
        }
    }
    PointCloud::new(points, label)
}

/// Writes ASCII PLY with 9 significant digits per coordinate.
pub fn save_ply<T: Scalar>(cloud: &PointCloud<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(cloud, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_ply<T: Scalar, W: Write>(cloud: &PointCloud<T>, mut w: W) -> Result<()> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    if !cloud.label.is_empty() {
        writeln!(w, "comment label {}", cloud.label)?;
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z\nend_header")?;
    for p in &cloud.points {
        writeln!(w, "{:.8e} {:.8e} {:.8e}", to_f64(p[0]), to_f64(p[1]), to_f64(p[2]))?;
    }
    Ok(())
}
