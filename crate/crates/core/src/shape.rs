//! Linear shape space: `M_S = mean + sum_i beta_i * s_i`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mesh::{self, Mesh};
use crate::pca::{self, PcaBasis};
use crate::{Error, Result, Vec3};

pub const DEFAULT_SHAPE_COMPONENTS: usize = 100;

/// Shape coefficients, raw PCA scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShapeParams(pub Vec<f64>);

impl ShapeParams {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    /// Mean mesh; its faces and UVs are shared by every evaluation.
    pub mean: Mesh,
    pub basis: PcaBasis,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShapeHeader {
    n_components: usize,
    #[serde(rename = "N")]
    vertex_count: usize,
    singular_values: Vec<f64>,
    n_samples: usize,
}

/// Fits the shape space to topologically consistent T-pose meshes. A
/// component count above `min(len - 1, 3N)` is clamped; check
/// `model.basis.clamped`.
pub fn fit_pca(meshes: &[Mesh], n_components: usize) -> Result<ShapeModel> {
    if meshes.len() < 2 {
        return Err(Error::Invalid(format!("shape PCA needs at least 2 meshes, got {}", meshes.len())));
    }
    let refs: Vec<&Mesh> = meshes.iter().collect();
    mesh::check_family(&refs)?;
    let flat: Vec<Vec<f64>> = meshes.iter().map(Mesh::flat_positions).collect();
    let rows: Vec<&[f64]> = flat.iter().map(Vec::as_slice).collect();
    let basis = pca::fit(&rows, n_components)?;
    let mean = meshes[0].with_vertices(unflatten(&basis.mean))?;
    Ok(ShapeModel { mean, basis })
}

pub(crate) fn unflatten(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

impl ShapeModel {
    pub fn n_components(&self) -> usize {
        self.basis.n_components()
    }

    pub fn vertex_count(&self) -> usize {
        self.mean.vertex_count()
    }

    /// Component `i` as an `N × 3` displacement field, flattened.
    pub fn component(&self, i: usize) -> &[f64] {
        self.basis.component(i)
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.basis.std_devs()
    }

    pub fn eval_vertices(&self, params: &ShapeParams) -> Result<Vec<Vec3>> {
        Ok(unflatten(&self.basis.reconstruct(&params.0)?))
    }

    pub fn eval_shape(&self, params: &ShapeParams) -> Result<Mesh> {
        self.mean.with_vertices(self.eval_vertices(params)?)
    }

    pub fn project_shape(&self, mesh: &Mesh) -> Result<ShapeParams> {
        let report = mesh::check_consistency(&self.mean, mesh);
        if !report.consistent {
            return Err(Error::Topology(report.lines.join("; ")));
        }
        Ok(ShapeParams(self.basis.project(&mesh.flat_positions())?))
    }

    /// Writes `mean.obj`, `components.bin` (little-endian f64, row-major)
    /// and `shape.json` into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        mesh::save_mesh(&self.mean, dir.join("mean.obj"))?;
        write_f64s(&dir.join("components.bin"), &self.basis.components)?;
        let header = ShapeHeader {
            n_components: self.n_components(),
            vertex_count: self.vertex_count(),
            singular_values: self.basis.singular_values.clone(),
            n_samples: self.basis.n_samples,
        };
        let p = dir.join("shape.json");
        fs::write(&p, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mean = mesh::load_mesh(dir.join("mean.obj"))?.mesh;
        let p = dir.join("shape.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let header: ShapeHeader = serde_json::from_str(&text)?;
        crate::error::check_len("mean vertices", header.vertex_count, mean.vertex_count())?;
        let dim = 3 * header.vertex_count;
        let components = read_f64s(&dir.join("components.bin"))?;
        crate::error::check_len("component entries", header.n_components * dim, components.len())?;
        crate::error::check_len("singular values", header.n_components, header.singular_values.len())?;
        let basis = PcaBasis {
            mean: mean.flat_positions(),
            components,
            singular_values: header.singular_values,
            dim,
            n_samples: header.n_samples,
            clamped: false,
        };
        Ok(Self { mean, basis })
    }
}

/// `(1 - t) * a + t * b`, exact at both endpoints.
pub fn interpolate_params(a: &ShapeParams, b: &ShapeParams, t: f64) -> Result<ShapeParams> {
    crate::error::check_len("shape parameters", a.len(), b.len())?;
    Ok(ShapeParams(lerp(&a.0, &b.0, t)))
}

pub(crate) fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    if t == 0.0 {
        return a.to_vec();
    }
    if t == 1.0 {
        return b.to_vec();
    }
    a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
}

pub(crate) fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Invalid(format!("{} is not a whole number of f64 values", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
