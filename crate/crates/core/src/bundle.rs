//! A fitted character model on disk and the full evaluation pipeline
//! `F_T(F_P(F_S(beta), theta), tex)`.
//!
//! Bundle layout:
//!
//! ```text
//! manifest.json
//! shape/{mean.obj, components.bin, shape.json}
//! texture/{texture.json, mean.bin, components.bin, mean.png}
//! skeleton.json
//! landmarks.json
//! eyes.json
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body::BodyModel;
use crate::eye::{self, EyeConstants, EyeballFit};
use crate::fit::{FitConfig, FitParams, FitProblem};
use crate::mesh::{self, Mesh};
use crate::pose::PoseParams;
use crate::rig::{LandmarkSet, Skeleton};
use crate::rng::XorShift64Star;
use crate::shape::{self, ShapeModel, ShapeParams};
use crate::synth::{self, FamilyManifest};
use crate::texture::{self, TextureImage, TextureModel};
use crate::{Error, Result, Vec3};

pub const BUNDLE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: u32,
    pub generator: String,
    pub shape_dim: usize,
    pub pose_dim: usize,
    pub tex_dim: usize,
    pub joint_count: usize,
    pub vertex_count: usize,
    pub face_count: usize,
    pub texture_width: usize,
    pub texture_height: usize,
    pub n_samples: usize,
    /// Components were clamped below the requested count.
    pub shape_clamped: bool,
    pub tex_clamped: bool,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub body: BodyModel,
    pub texture: TextureModel,
    pub eyes: EyeConstants,
    pub manifest: BundleManifest,
}

/// What clients need to drive the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub shape_dim: usize,
    pub pose_dim: usize,
    pub tex_dim: usize,
    pub joint_names: Vec<String>,
    pub sigma_shape: Vec<f64>,
    pub sigma_tex: Vec<f64>,
    pub vertex_count: usize,
    pub face_count: usize,
}

/// A posed, textured character.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub mesh: Mesh,
    pub joints: Vec<Vec3>,
    pub texture: TextureImage,
    pub eyeballs: Vec<(String, EyeballFit)>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

impl ModelBundle {
    pub fn new(
        shape: ShapeModel,
        skeleton: Skeleton,
        landmarks: LandmarkSet,
        texture: TextureModel,
        eyes: EyeConstants,
    ) -> Result<Self> {
        let shape_clamped = shape.basis.clamped;
        let tex_clamped = texture.basis.clamped;
        let body = BodyModel::new(shape, skeleton, landmarks)?;
        if !body.shape.mean.has_uvs {
            return Err(Error::Invalid("mean mesh has no texture coordinates".into()));
        }
        let manifest = BundleManifest {
            format: BUNDLE_FORMAT,
            generator: format!("bipar {}", env!("CARGO_PKG_VERSION")),
            shape_dim: body.shape_dim(),
            pose_dim: body.pose_dim(),
            tex_dim: texture.n_tex(),
            joint_count: body.joint_count(),
            vertex_count: body.vertex_count(),
            face_count: body.shape.mean.face_count(),
            texture_width: texture.width,
            texture_height: texture.height,
            n_samples: body.shape.basis.n_samples,
            shape_clamped,
            tex_clamped,
        };
        Ok(Self {
            body,
            texture,
            eyes,
            manifest,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.body.shape.save_dir(dir.join("shape"))?;
        self.texture.save_dir(dir.join("texture"))?;
        self.body.skeleton.save(dir.join("skeleton.json"))?;
        self.body.landmarks.save(dir.join("landmarks.json"))?;
        write_json(&dir.join("eyes.json"), &self.eyes)?;
        write_json(&dir.join("manifest.json"), &self.manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: BundleManifest = read_json(&dir.join("manifest.json"))?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(Error::Invalid(format!(
                "unsupported bundle format {} (expected {BUNDLE_FORMAT})",
                manifest.format
            )));
        }
        let mut shape = ShapeModel::load_dir(dir.join("shape"))?;
        shape.basis.clamped = manifest.shape_clamped;
        let mut texture = TextureModel::load_dir(dir.join("texture"))?;
        texture.basis.clamped = manifest.tex_clamped;
        let skeleton = Skeleton::load(dir.join("skeleton.json"))?;
        let landmarks = LandmarkSet::load(dir.join("landmarks.json"))?;
        let eyes: EyeConstants = read_json(&dir.join("eyes.json"))?;
        let bundle = Self::new(shape, skeleton, landmarks, texture, eyes)?;
        let m = &bundle.manifest;
        for (what, expected, got) in [
            ("shape_dim", manifest.shape_dim, m.shape_dim),
            ("pose_dim", manifest.pose_dim, m.pose_dim),
            ("tex_dim", manifest.tex_dim, m.tex_dim),
            ("vertex_count", manifest.vertex_count, m.vertex_count),
            ("face_count", manifest.face_count, m.face_count),
        ] {
            crate::error::check_len(what, expected, got)?;
        }
        Ok(Self { manifest, ..bundle })
    }

    pub fn meta(&self) -> BundleMeta {
        BundleMeta {
            shape_dim: self.manifest.shape_dim,
            pose_dim: self.manifest.pose_dim,
            tex_dim: self.manifest.tex_dim,
            joint_names: self.body.skeleton.joint_names(),
            sigma_shape: self.body.shape.std_devs(),
            sigma_tex: self.texture.basis.std_devs(),
            vertex_count: self.manifest.vertex_count,
            face_count: self.manifest.face_count,
        }
    }

    /// Zero vectors of every dimension.
    pub fn zero_params(&self) -> (ShapeParams, PoseParams, Vec<f64>) {
        (
            ShapeParams::zeros(self.manifest.shape_dim),
            PoseParams::zeros(self.manifest.joint_count),
            vec![0.0; self.manifest.tex_dim],
        )
    }

    pub fn eval(&self, beta: &ShapeParams, theta: &PoseParams, tex: &[f64]) -> Result<Evaluated> {
        crate::error::check_len("pose parameters", self.body.pose_dim(), theta.0.len())?;
        let posed = self.body.forward(beta, theta)?;
        let eyeballs = self.body.eyeballs(&posed, self.eyes.c1, self.eyes.c2)?;
        let mesh = self.body.shape.mean.with_vertices(posed.vertices)?;
        let texture = self.texture.eval_texture(tex)?;
        texture::apply_texture(&mesh, &texture)?;
        Ok(Evaluated {
            mesh,
            joints: posed.joints,
            texture,
            eyeballs,
        })
    }
}

/// Fits shape and texture spaces and eye constants to a family directory.
pub fn fit_from_family(dir: impl AsRef<Path>, shape_k: usize, tex_k: usize) -> Result<ModelBundle> {
    let dir = dir.as_ref();
    let manifest = FamilyManifest::load(dir)?;
    if manifest.samples.len() < 2 {
        return Err(Error::Invalid("model fitting needs at least 2 samples".into()));
    }
    let skeleton = Skeleton::load(manifest.resolve(dir, &manifest.skeleton))?;
    let landmarks = LandmarkSet::load(manifest.resolve(dir, &manifest.landmarks))?;
    let mut meshes = Vec::with_capacity(manifest.samples.len());
    let mut images = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        meshes.push(mesh::load_mesh(manifest.resolve(dir, &s.mesh))?.mesh);
        images.push(TextureImage::load_png(manifest.resolve(dir, &s.texture))?);
    }
    mesh::check_family(&meshes.iter().collect::<Vec<_>>())?;

    let mut ratios = Vec::new();
    for (s, m) in manifest.samples.iter().zip(&meshes) {
        for (name, truth) in &s.eyeballs {
            let pts: Vec<Vec3> = landmarks.patch(name)?.iter().map(|&i| m.vertices[i]).collect();
            let socket = eye::fit_socket_circle(&pts, &truth.socket_normal)?;
            ratios.push((truth.eye_radius, truth.depth, socket.radius));
        }
    }
    let eyes = if ratios.is_empty() {
        manifest.eye_constants
    } else {
        eye::estimate_eye_constants(&ratios)?
    };

    let shape = shape::fit_pca(&meshes, shape_k)?;
    let texture = texture::fit_texture_pca(&images, tex_k)?;
    ModelBundle::new(shape, skeleton, landmarks, texture, eyes)
}

/// A fitting target, optionally with the parameters that produced it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_vertices: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_joints: Option<Vec<[f64; 3]>>,
    /// Evaluation only; never shown to the optimizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<FitParams>,
    /// Noise-free joints when `target_joints` is perturbed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_joints: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<FitConfig>,
}

fn to_points(p: &[[f64; 3]]) -> Vec<Vec3> {
    p.iter().map(|a| Vec3::from(*a)).collect()
}

pub(crate) fn to_arrays(p: &[Vec3]) -> Vec<[f64; 3]> {
    p.iter().map(|v| [v.x, v.y, v.z]).collect()
}

impl Scene {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn problem<'a>(&self, body: &'a BodyModel, config: &FitConfig) -> Result<FitProblem<'a>> {
        let mut p = FitProblem::new(body).with_weights(config.lambda_s, config.lambda_p);
        if let Some(v) = &self.target_vertices {
            p = p.with_vertices(to_points(v));
        }
        if let Some(j) = &self.target_joints {
            p = p.with_joints(to_points(j));
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneOptions {
    pub seed: u64,
    /// Shape coefficients are drawn uniformly in `+-beta_sigmas * sigma`.
    pub beta_sigmas: f64,
    /// Largest per-joint rotation angle.
    pub max_angle: f64,
    /// Standard deviation of Gaussian joint noise.
    pub joint_noise: f64,
    pub with_vertices: bool,
    pub with_joints: bool,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            beta_sigmas: 2.0,
            max_angle: 0.6,
            joint_noise: 0.0,
            with_vertices: true,
            with_joints: true,
        }
    }
}

/// Random parameters posed through the independent reference skinning.
pub fn generate_scene(body: &BodyModel, opts: &SceneOptions) -> Result<Scene> {
    if !(opts.with_vertices || opts.with_joints) {
        return Err(Error::Invalid("scene needs vertex or joint targets".into()));
    }
    let mut rng = XorShift64Star::new(opts.seed);
    let beta = ShapeParams(
        body.shape
            .std_devs()
            .iter()
            .map(|s| rng.uniform(-opts.beta_sigmas, opts.beta_sigmas) * s)
            .collect(),
    );
    let mut theta = PoseParams::zeros(body.joint_count());
    for k in 0..body.joint_count() {
        let axis = loop {
            let v = Vec3::new(rng.normal(), rng.normal(), rng.normal());
            if v.norm() > 1e-6 {
                break v.normalize();
            }
        };
        theta.set_joint(k, &(axis * rng.uniform(0.0, opts.max_angle)));
    }
    let rest = body.shape.eval_shape(&beta)?;
    let rest_joints = crate::rig::compute_rest_joints(&rest, &body.landmarks, &body.skeleton)?.rest_joints;
    let parents: Vec<_> = body.skeleton.joints.iter().map(|j| j.parent).collect();
    let (vertices, joints) = synth::naive_pose(&rest.vertices, &rest_joints, &parents, &body.skeleton.weights, &theta)?;
    let clean = to_arrays(&joints);
    let noisy = if opts.joint_noise > 0.0 {
        joints
            .iter()
            .map(|j| j + Vec3::new(rng.normal(), rng.normal(), rng.normal()) * opts.joint_noise)
            .collect()
    } else {
        joints
    };
    Ok(Scene {
        target_vertices: opts.with_vertices.then(|| to_arrays(&vertices)),
        target_joints: opts.with_joints.then(|| to_arrays(&noisy)),
        clean_joints: (opts.joint_noise > 0.0 && opts.with_joints).then_some(clean),
        truth: Some(FitParams { beta, theta }),
        config: None,
    })
}

/// Result of a `/eval` call in transport form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPayload {
    pub vertices: Vec<f64>,
    pub faces: Vec<u32>,
    pub uvs: Vec<f64>,
    pub texture: TexturePayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TexturePayload {
    pub w: usize,
    pub h: usize,
    pub rgb8_base64: String,
}

impl EvalPayload {
    pub fn from_evaluated(e: &Evaluated) -> Self {
        Self {
            vertices: e.mesh.flat_positions(),
            faces: e.mesh.faces.iter().flatten().copied().collect(),
            uvs: e.mesh.uvs.iter().flatten().copied().collect(),
            texture: TexturePayload {
                w: e.texture.width,
                h: e.texture.height,
                rgb8_base64: e.texture.to_rgb8_base64(),
            },
        }
    }
}

/// Magic prefix of the binary eval encoding.
pub const BINARY_MAGIC: &[u8; 4] = b"BPR1";

/// Little-endian binary form of an evaluation:
/// magic, then `u32` vertex count, face count, texture width and height,
/// then `f64` positions, `u32` face indices, `f64` UVs and RGB8 texels.
pub fn encode_binary(e: &Evaluated) -> Vec<u8> {
    let m = &e.mesh;
    let t = &e.texture;
    let mut out = Vec::with_capacity(20 + m.vertex_count() * 40 + m.face_count() * 12 + t.pixels.len());
    out.extend_from_slice(BINARY_MAGIC);
    for n in [m.vertex_count(), m.face_count(), t.width, t.height] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for v in &m.vertices {
        v.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
    }
    for f in &m.faces {
        f.iter().for_each(|i| out.extend_from_slice(&i.to_le_bytes()));
    }
    for uv in &m.uvs {
        uv.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
    }
    out.extend_from_slice(&t.to_rgb8());
    out
}

/// Decoded binary evaluation; texels are raw RGB8.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryEval {
    pub vertices: Vec<f64>,
    pub faces: Vec<u32>,
    pub uvs: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub rgb8: Vec<u8>,
}

pub fn decode_binary(bytes: &[u8]) -> Result<BinaryEval> {
    let bad = |msg: &str| Error::Invalid(format!("binary eval payload: {msg}"));
    if bytes.len() < 20 || &bytes[..4] != BINARY_MAGIC {
        return Err(bad("missing header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (nv, nf, w, h) = (word(0), word(1), word(2), word(3));
    let expected = 20 + nv * 24 + nf * 12 + nv * 16 + w * h * 3;
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, got {}", bytes.len())));
    }
    let mut at = 20;
    let mut f64s = |count: usize| {
        let v: Vec<f64> = bytes[at..at + 8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        at += 8 * count;
        v
    };
    let vertices = f64s(3 * nv);
    let faces_start = 20 + 24 * nv;
    let faces = bytes[faces_start..faces_start + 12 * nf]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let uv_start = faces_start + 12 * nf;
    let uvs = bytes[uv_start..uv_start + 16 * nv]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(BinaryEval {
        vertices,
        faces,
        uvs,
        width: w,
        height: h,
        rgb8: bytes[uv_start + 16 * nv..].to_vec(),
    })
}
