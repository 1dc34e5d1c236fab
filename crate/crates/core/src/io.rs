//! JSON and OBJ input/output, run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PmcError, Result};
use crate::grid::SphericalGrid;
use crate::harmonics::{evaluate_at, HarmonicField, SphericalTransform};
use crate::weierstrass::PlanarImmersion;

/// Formats floats with 17 significant digits; non-finite values become `null`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedFormatter;

impl serde_json::ser::Formatter for FixedFormatter {
    fn write_f64<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        value: f64,
    ) -> std::io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        value: f32,
    ) -> std::io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFormatter);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?).map_err(|e| PmcError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| PmcError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// One `Y_lm` term of a [`FieldSpec::Terms`] field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub l: usize,
    pub m: i64,
    pub coeff: f64,
}

/// Full coefficient lists: component-major, index `l² + l + m` within a
/// component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub components: usize,
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

/// A scalar written as `constant + linear·x + Σ coeff·Y_lm`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub linear: [f64; 3],
    #[serde(default)]
    pub harmonics: Vec<Term>,
    #[serde(default)]
    pub degree: Option<usize>,
}

/// On-disk form of a [`HarmonicField`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Coefficients(CoefficientSpec),
    Terms(TermSpec),
}

impl TryFrom<FieldSpec> for HarmonicField {
    type Error = PmcError;

    fn try_from(spec: FieldSpec) -> Result<Self> {
        match spec {
            FieldSpec::Coefficients(c) => {
                HarmonicField::from_coeffs(c.components, c.degree, c.coeffs)
            }
            FieldSpec::Terms(TermSpec {
                constant,
                linear,
                harmonics,
                degree,
            }) => {
                let needed = harmonics
                    .iter()
                    .map(|t| t.l)
                    .chain(linear.iter().any(|b| *b != 0.0).then_some(1))
                    .max()
                    .unwrap_or(0);
                let degree = degree.unwrap_or(needed);
                if degree < needed {
                    return Err(PmcError::Config(format!(
                        "degree {degree} is below the highest term {needed}"
                    )));
                }
                let mut field = HarmonicField::constant(constant, degree);
                for (axis, b) in linear.iter().enumerate() {
                    if *b != 0.0 {
                        field = field.axpy(*b, &HarmonicField::coordinate(axis, degree))?;
                    }
                }
                for t in harmonics {
                    if t.m.unsigned_abs() as usize > t.l {
                        return Err(PmcError::Config(format!(
                            "invalid order m={} for l={}",
                            t.m, t.l
                        )));
                    }
                    let v = field.get(0, t.l, t.m);
                    field.set(0, t.l, t.m, v + t.coeff);
                }
                Ok(field)
            }
        }
    }
}

impl From<&HarmonicField> for FieldSpec {
    fn from(field: &HarmonicField) -> Self {
        FieldSpec::Coefficients(CoefficientSpec {
            components: field.components(),
            degree: field.degree(),
            coeffs: field.coeffs().to_vec(),
        })
    }
}

pub fn read_field(path: &Path) -> Result<HarmonicField> {
    read_json::<FieldSpec>(path)?.try_into()
}

pub fn write_field(path: &Path, field: &HarmonicField) -> Result<()> {
    write_json(path, &FieldSpec::from(field))
}

/// A polygon mesh with 0-based face indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<Vec<usize>>,
}

impl Mesh {
    /// Every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        let mut edges: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for f in &self.faces {
            for i in 0..f.len() {
                let (a, b) = (f[i], f[(i + 1) % f.len()]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        edges.values().all(|&n| n == 2)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {:.16e} {:.16e} {:.16e}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            out.push('f');
            for i in f {
                let _ = write!(out, " {}", i + 1);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| PmcError::io(path, e))?;
        file.write_all(self.to_obj().as_bytes())
            .map_err(|e| PmcError::io(path, e))
    }
}

/// Mesh of a spherical immersion over the nodes of `grid`: ring quads closed
/// in longitude, and triangle fans to the two pole images.
pub fn sphere_mesh(field: &HarmonicField, grid: &SphericalGrid) -> Result<Mesh> {
    if field.components() != 3 {
        return Err(PmcError::Config(
            "mesh export needs a 3-component field".into(),
        ));
    }
    let values = SphericalTransform::new(grid).synthesize(field)?;
    let (nlat, nlon) = (grid.n_lat(), grid.n_lon());
    let mut vertices: Vec<[f64; 3]> = (0..grid.len())
        .map(|k| [values[0][k], values[1][k], values[2][k]])
        .collect();
    for theta in [0.0, std::f64::consts::PI] {
        vertices.push(std::array::from_fn(|c| {
            evaluate_at(field, c, theta, 0.0).value
        }));
    }
    let (north, south) = (grid.len(), grid.len() + 1);
    let node = |i: usize, j: usize| i * nlon + j % nlon;
    let mut faces = Vec::new();
    for j in 0..nlon {
        faces.push(vec![north, node(0, j), node(0, j + 1)]);
    }
    for i in 0..nlat - 1 {
        for j in 0..nlon {
            faces.push(vec![
                node(i, j),
                node(i + 1, j),
                node(i + 1, j + 1),
                node(i, j + 1),
            ]);
        }
    }
    for j in 0..nlon {
        faces.push(vec![node(nlat - 1, j), south, node(nlat - 1, j + 1)]);
    }
    Ok(Mesh { vertices, faces })
}

/// Open mesh of a planar immersion over its polar grid.
pub fn disk_mesh(surface: &PlanarImmersion) -> Mesh {
    let (nr, na) = (surface.grid.n_radial(), surface.grid.n_angular());
    let vertices = surface.jets.iter().map(|j| j.position.into()).collect();
    let node = |i: usize, j: usize| i * na + j % na;
    let mut faces = Vec::new();
    for i in 0..nr.saturating_sub(1) {
        for j in 0..na {
            faces.push(vec![
                node(i, j),
                node(i + 1, j),
                node(i + 1, j + 1),
                node(i, j + 1),
            ]);
        }
    }
    Mesh { vertices, faces }
}

pub fn export_obj(field: &HarmonicField, grid: &SphericalGrid, path: &Path) -> Result<Mesh> {
    let mesh = sphere_mesh(field, grid)?;
    mesh.write_obj(path)?;
    Ok(mesh)
}

pub fn export_planar_obj(surface: &PlanarImmersion, path: &Path) -> Result<Mesh> {
    let mesh = disk_mesh(surface);
    mesh.write_obj(path)?;
    Ok(mesh)
}

/// Vertex records of an OBJ file.
pub fn read_obj_vertices(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = std::fs::read_to_string(path).map_err(|e| PmcError::io(path, e))?;
    text.lines()
        .filter_map(|l| l.strip_prefix("v "))
        .map(|rest| {
            let v: Vec<f64> = rest
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| PmcError::Data(format!("bad vertex record: {e}")))?;
            <[f64; 3]>::try_from(v).map_err(|_| PmcError::Data("vertex needs 3 coordinates".into()))
        })
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| PmcError::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Record of one CLI invocation that wrote outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub diagnostics: serde_json::Value,
    /// Seconds since the Unix epoch, taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: u64,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or_else(|| {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs())
            });
        RunManifest {
            command: command.to_string(),
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            diagnostics: serde_json::Value::Null,
            timestamp,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `manifest.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        write_json(&path, self)?;
        Ok(path)
    }
}
