//! Procedural biped family with known ground truth.
//!
//! Every body part is a capped tube around an axis-aligned bone. Joint `k`
//! owns one tube that starts just behind the joint; its two landmark
//! patches are the tube rings at `-EPS` and `+EPS` along the bone, so the
//! patch bounding-box center is the joint itself. Shape factors are
//! per-tube diagonal affine displacement fields, which keeps every ring an
//! axis-aligned ellipse: a sample is `template + A z` and its joints are
//! the same affine map applied to the template joints.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, UnitQuaternion, Vector4};
use serde::{Deserialize, Serialize};

use crate::eye::{EyeConstants, EyeballFit};
use crate::mesh::{self, Mesh, TopologySignature};
use crate::pose::PoseParams;
use crate::rig::{self, LandmarkSet, Skeleton, SkinWeights, DEFAULT_JOINTS};
use crate::rng::XorShift64Star;
use crate::texture::TextureImage;
use crate::{Error, Result, Vec3};

/// Half-gap between the two landmark rings of a joint.
pub const EPS: f64 = 0.01;

pub const FACTOR_NAMES: [&str; 5] = ["limb_length", "torso_girth", "head_scale", "ear_length", "belly"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyConfig {
    pub seed: u64,
    /// Rings per tube.
    pub resolution: usize,
    /// Vertices per ring, a multiple of 4.
    pub ring_vertices: usize,
    pub factors: Vec<FactorRange>,
    /// Eyeball radius over socket radius.
    pub eye_c1: f64,
    /// Eyeball depth behind the socket over socket radius.
    pub eye_c2: f64,
    pub samples: usize,
    pub texture_size: usize,
    /// Weight given to the parent joint on the first ring of each tube.
    pub blend: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        let ranges = [(-0.15, 0.15), (-0.2, 0.2), (-0.15, 0.2), (-0.3, 0.5), (-0.2, 0.4)];
        Self {
            seed: 7,
            resolution: 6,
            ring_vertices: 12,
            factors: FACTOR_NAMES
                .iter()
                .zip(ranges)
                .map(|(n, (min, max))| FactorRange {
                    name: n.to_string(),
                    min,
                    max,
                })
                .collect(),
            eye_c1: 1.3,
            eye_c2: 0.45,
            samples: 200,
            texture_size: 64,
            blend: 0.3,
        }
    }
}

impl FamilyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 3 {
            return Err(Error::Invalid(format!("resolution must be at least 3, got {}", self.resolution)));
        }
        if self.ring_vertices < 4 || !self.ring_vertices.is_multiple_of(4) {
            return Err(Error::Invalid(format!(
                "ring_vertices must be a positive multiple of 4, got {}",
                self.ring_vertices
            )));
        }
        if self.factors.is_empty() {
            return Err(Error::Invalid("at least one shape factor is required".into()));
        }
        for (i, f) in self.factors.iter().enumerate() {
            if !FACTOR_NAMES.contains(&f.name.as_str()) {
                return Err(Error::UnknownName(format!("shape factor {:?}", f.name)));
            }
            if self.factors[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Invalid(format!("shape factor {:?} listed twice", f.name)));
            }
            if !(f.min.is_finite() && f.max.is_finite() && f.min <= f.max) {
                return Err(Error::Invalid(format!("bad range for factor {:?}", f.name)));
            }
            // stay clear of collapsing rings
            if f.min <= -0.45 || f.max > 2.0 {
                return Err(Error::Invalid(format!(
                    "range for factor {:?} must lie in (-0.45, 2]",
                    f.name
                )));
            }
        }
        if !(self.eye_c1 > 0.0 && self.eye_c2 >= 0.0 && self.eye_c1.is_finite() && self.eye_c2.is_finite()) {
            return Err(Error::Invalid("eye constants must be finite, c1 > 0, c2 >= 0".into()));
        }
        if self.samples == 0 {
            return Err(Error::Invalid("sample count must be at least 1".into()));
        }
        if self.texture_size == 0 {
            return Err(Error::Invalid("texture_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.blend) {
            return Err(Error::Invalid(format!("blend must lie in [0, 1), got {}", self.blend)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Part {
    Joint(usize),
    Ear,
    Socket,
}

#[derive(Debug, Clone)]
struct Tube {
    name: String,
    part: Part,
    owner: usize,
    anchor: Vec3,
    dir: Vec3,
    length: f64,
    radius: f64,
}

impl Tube {
    fn offsets(&self, resolution: usize) -> Vec<f64> {
        match self.part {
            Part::Joint(_) => {
                let mut o = vec![-EPS, EPS];
                let rest = resolution - 2;
                o.extend((1..=rest).map(|j| EPS + (self.length - EPS) * j as f64 / rest as f64));
                o
            }
            _ => (0..resolution)
                .map(|j| self.length * j as f64 / (resolution - 1) as f64)
                .collect(),
        }
    }

    fn frame(&self) -> (Vec3, Vec3) {
        if self.dir.y.abs() > 0.5 {
            (Vec3::x(), Vec3::z())
        } else if self.dir.x.abs() > 0.5 {
            (Vec3::y(), Vec3::z())
        } else {
            (Vec3::x(), Vec3::y())
        }
    }
}

const HEAD: usize = 5;

fn template_joints() -> Vec<Vec3> {
    let mut j = vec![Vec3::zeros(); DEFAULT_JOINTS.len()];
    let set = |j: &mut Vec<Vec3>, name: &str, p: [f64; 3]| {
        let k = DEFAULT_JOINTS.iter().position(|(n, _)| *n == name).expect("known joint");
        j[k] = Vec3::from(p);
    };
    set(&mut j, "pelvis", [0.0, 1.0, 0.0]);
    set(&mut j, "spine1", [0.0, 1.15, 0.0]);
    set(&mut j, "spine2", [0.0, 1.3, 0.0]);
    set(&mut j, "chest", [0.0, 1.45, 0.0]);
    set(&mut j, "neck", [0.0, 1.65, 0.0]);
    set(&mut j, "head", [0.0, 1.75, 0.0]);
    set(&mut j, "tail_root", [0.0, 1.0, -0.15]);
    for (side, s) in [("L", 1.0), ("R", -1.0)] {
        set(&mut j, &format!("clavicle_{side}"), [0.05 * s, 1.5, 0.0]);
        set(&mut j, &format!("shoulder_{side}"), [0.2 * s, 1.5, 0.0]);
        set(&mut j, &format!("elbow_{side}"), [0.5 * s, 1.5, 0.0]);
        set(&mut j, &format!("wrist_{side}"), [0.75 * s, 1.5, 0.0]);
        set(&mut j, &format!("hip_{side}"), [0.1 * s, 0.95, 0.0]);
        set(&mut j, &format!("knee_{side}"), [0.1 * s, 0.5, 0.0]);
        set(&mut j, &format!("ankle_{side}"), [0.1 * s, 0.08, 0.0]);
        set(&mut j, &format!("toe_{side}"), [0.1 * s, 0.08, 0.15]);
    }
    j
}

fn build_tubes() -> Vec<Tube> {
    let joints = template_joints();
    let mut tubes = Vec::new();
    for (k, (name, _)) in DEFAULT_JOINTS.iter().enumerate() {
        let side = if name.ends_with("_R") { -1.0 } else { 1.0 };
        let base = name.trim_end_matches("_L").trim_end_matches("_R");
        let (dir, length, radius) = match base {
            "pelvis" => (Vec3::y(), 0.15, 0.12),
            "spine1" | "spine2" => (Vec3::y(), 0.15, 0.11),
            "chest" => (Vec3::y(), 0.2, 0.13),
            "neck" => (Vec3::y(), 0.1, 0.05),
            "head" => (Vec3::y(), 0.2, 0.12),
            "tail_root" => (-Vec3::z(), 0.3, 0.03),
            "clavicle" => (Vec3::x() * side, 0.15, 0.04),
            "shoulder" => (Vec3::x() * side, 0.3, 0.045),
            "elbow" => (Vec3::x() * side, 0.25, 0.04),
            "wrist" => (Vec3::x() * side, 0.1, 0.035),
            "hip" => (-Vec3::y(), 0.45, 0.06),
            "knee" => (-Vec3::y(), 0.42, 0.05),
            "ankle" => (Vec3::z(), 0.15, 0.04),
            "toe" => (Vec3::z(), 0.06, 0.03),
            other => unreachable!("no tube layout for {other}"),
        };
        tubes.push(Tube {
            name: name.to_string(),
            part: Part::Joint(k),
            owner: k,
            anchor: joints[k],
            dir,
            length,
            radius,
        });
    }
    for (side, s) in [("L", 1.0), ("R", -1.0)] {
        tubes.push(Tube {
            name: format!("ear_{side}"),
            part: Part::Ear,
            owner: HEAD,
            anchor: Vec3::new(0.06 * s, 1.85, 0.0),
            dir: Vec3::y(),
            length: 0.15,
            radius: 0.025,
        });
        tubes.push(Tube {
            name: format!("eye_socket_{side}"),
            part: Part::Socket,
            owner: HEAD,
            anchor: Vec3::new(0.045 * s, 1.8, 0.11),
            dir: -Vec3::z(),
            length: 0.03,
            radius: 0.022,
        });
    }
    tubes
}

/// Diagonal affine displacement `diag * x + offset` of one factor on one tube.
fn factor_field(factor: &str, tube: &Tube) -> Option<(Vec3, Vec3)> {
    let base = tube.name.trim_end_matches("_L").trim_end_matches("_R");
    let left = !tube.name.ends_with("_R");
    match factor {
        "limb_length" => match base {
            "shoulder" | "elbow" | "wrist" => {
                let pivot = if left { 0.2 } else { -0.2 };
                Some((Vec3::x(), Vec3::new(-pivot, 0.0, 0.0)))
            }
            "hip" | "knee" | "ankle" | "toe" => Some((Vec3::y(), Vec3::new(0.0, -0.95, 0.0))),
            _ => None,
        },
        "torso_girth" => match base {
            "pelvis" | "spine1" | "spine2" | "chest" => Some((Vec3::new(1.0, 0.0, 1.0), Vec3::zeros())),
            _ => None,
        },
        "head_scale" => match tube.part {
            Part::Ear | Part::Socket => Some((Vec3::repeat(1.0), -template_joints()[HEAD])),
            Part::Joint(HEAD) => Some((Vec3::repeat(1.0), -template_joints()[HEAD])),
            _ => None,
        },
        "ear_length" => match tube.part {
            Part::Ear => Some((Vec3::y(), Vec3::new(0.0, -1.85, 0.0))),
            _ => None,
        },
        "belly" => match base {
            "spine1" | "spine2" => Some((Vec3::z(), Vec3::zeros())),
            _ => None,
        },
        _ => None,
    }
}

fn displace(field: Option<(Vec3, Vec3)>, p: &Vec3) -> Vec3 {
    field.map_or(Vec3::zeros(), |(d, o)| d.component_mul(p) + o)
}

/// Ground-truth eyeball of one socket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeTruth {
    pub socket_center: Vec3,
    pub socket_radius: f64,
    pub socket_normal: Vec3,
    pub eye_center: Vec3,
    pub eye_radius: f64,
    pub depth: f64,
}

impl From<EyeTruth> for EyeballFit {
    fn from(t: EyeTruth) -> Self {
        EyeballFit {
            socket_center: t.socket_center,
            socket_radius: t.socket_radius,
            socket_normal: t.socket_normal,
            eye_center: t.eye_center,
            eye_radius: t.eye_radius,
            depth: t.depth,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FamilySample {
    pub index: usize,
    pub z: Vec<f64>,
    /// T-pose mesh.
    pub mesh: Mesh,
    pub joints: Vec<Vec3>,
    pub eyeballs: BTreeMap<String, EyeTruth>,
    pub texture: TextureImage,
}

/// The template together with the affine generator of a configuration.
#[derive(Debug, Clone)]
pub struct Family {
    pub config: FamilyConfig,
    pub template: Mesh,
    pub landmarks: LandmarkSet,
    /// Default skeleton with template rest joints and weights.
    pub skeleton: Skeleton,
    /// Owning joint of every vertex.
    pub region_labels: Vec<usize>,
    pub eye_socket_patches: Vec<String>,
    template_joints: Vec<Vec3>,
    /// Per factor, flat `3N` vertex displacement.
    vertex_basis: Vec<Vec<f64>>,
    joint_basis: Vec<Vec<Vec3>>,
    sockets: Vec<(String, Vec3, f64, Vec<Option<(Vec3, Vec3)>>)>,
}

pub fn generate_template(config: &FamilyConfig) -> Result<(Mesh, LandmarkSet, Skeleton)> {
    let f = Family::new(config)?;
    Ok((f.template, f.landmarks, f.skeleton))
}

impl Family {
    pub fn new(config: &FamilyConfig) -> Result<Self> {
        config.validate()?;
        let tubes = build_tubes();
        let s_count = config.resolution;
        let m = config.ring_vertices;
        let per_tube = s_count * m + 2;
        let n = tubes.len() * per_tube;
        let kc = DEFAULT_JOINTS.len();

        let cols = (tubes.len() as f64).sqrt().ceil() as usize;
        let rows = tubes.len().div_ceil(cols);

        let mut vertices = Vec::with_capacity(n);
        let mut uvs = Vec::with_capacity(n);
        let mut faces = Vec::new();
        let mut owner = Vec::with_capacity(n);
        let mut weights = vec![0.0; n * kc];
        let mut patches = BTreeMap::new();
        let mut tube_of = Vec::with_capacity(n);

        for (t, tube) in tubes.iter().enumerate() {
            let base = vertices.len();
            let offsets = tube.offsets(s_count);
            let (e1, e2) = tube.frame();
            let (cu, cv) = ((t % cols) as f64 / cols as f64, (t / cols) as f64 / rows as f64);
            let cell = |a: f64, b: f64| [cu + (0.05 + 0.9 * a) / cols as f64, cv + (0.05 + 0.9 * b) / rows as f64];
            let parent = match tube.part {
                Part::Joint(k) => DEFAULT_JOINTS[k].1,
                _ => None,
            };
            for (s, off) in offsets.iter().enumerate() {
                let center = tube.anchor + tube.dir * *off;
                for k in 0..m {
                    let a = 2.0 * PI * k as f64 / m as f64;
                    vertices.push(center + (e1 * a.cos() + e2 * a.sin()) * tube.radius);
                    uvs.push(cell(s as f64 / (s_count - 1) as f64, 0.5 * (1.0 - a.cos())));
                }
            }
            let first = offsets[0] - 0.5 * tube.radius;
            let last = offsets[s_count - 1] + 0.5 * tube.radius;
            vertices.push(tube.anchor + tube.dir * first);
            uvs.push(cell(0.0, 0.5));
            vertices.push(tube.anchor + tube.dir * last);
            uvs.push(cell(1.0, 0.5));

            for local in 0..per_tube {
                let v = base + local;
                owner.push(tube.owner);
                tube_of.push(t);
                let blended = local < m || local == s_count * m;
                match parent {
                    Some(p) if blended && config.blend > 0.0 => {
                        weights[v * kc + tube.owner] = 1.0 - config.blend;
                        weights[v * kc + p] = config.blend;
                    }
                    _ => weights[v * kc + tube.owner] = 1.0,
                }
            }

            let idx = |s: usize, k: usize| (base + s * m + k % m) as u32;
            for s in 0..s_count - 1 {
                for k in 0..m {
                    let (a, b, c, d) = (idx(s, k), idx(s, k + 1), idx(s + 1, k + 1), idx(s + 1, k));
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                }
            }
            let (p0, p1) = ((base + s_count * m) as u32, (base + s_count * m + 1) as u32);
            for k in 0..m {
                faces.push([p0, idx(0, k + 1), idx(0, k)]);
                faces.push([p1, idx(s_count - 1, k), idx(s_count - 1, k + 1)]);
            }

            let ring = |s: usize| (0..m).map(|k| base + s * m + k).collect::<Vec<_>>();
            match tube.part {
                Part::Joint(_) => {
                    patches.insert(format!("{}_a", tube.name), ring(0));
                    patches.insert(format!("{}_b", tube.name), ring(1));
                }
                Part::Socket => {
                    patches.insert(tube.name.clone(), ring(0));
                }
                Part::Ear => {}
            }
        }

        let template = Mesh::new(vertices, faces, uvs)?;
        let landmarks = LandmarkSet { patches };
        let weights = SkinWeights::new(n, kc, weights)?;
        let skeleton = rig::compute_rest_joints(&template, &landmarks, &rig::default_skeleton().with_weights(weights)?)?;

        let tj = template_joints();
        let mut vertex_basis = Vec::with_capacity(config.factors.len());
        let mut joint_basis = Vec::with_capacity(config.factors.len());
        for f in &config.factors {
            let fields: Vec<_> = tubes.iter().map(|t| factor_field(&f.name, t)).collect();
            let mut col = Vec::with_capacity(3 * n);
            for (v, p) in template.vertices.iter().enumerate() {
                col.extend(displace(fields[tube_of[v]], p).iter());
            }
            vertex_basis.push(col);
            joint_basis.push((0..kc).map(|k| displace(fields[k], &tj[k])).collect());
        }
        let sockets = tubes
            .iter()
            .filter(|t| t.part == Part::Socket)
            .map(|t| {
                let fields = config.factors.iter().map(|f| factor_field(&f.name, t)).collect();
                (t.name.clone(), t.anchor, t.radius, fields)
            })
            .collect::<Vec<_>>();

        Ok(Self {
            config: config.clone(),
            template,
            landmarks,
            skeleton,
            region_labels: owner,
            eye_socket_patches: sockets.iter().map(|s| s.0.clone()).collect(),
            template_joints: tj,
            vertex_basis,
            joint_basis,
            sockets,
        })
    }

    pub fn factor_count(&self) -> usize {
        self.config.factors.len()
    }

    /// Column `i` of the generator matrix `A` as a flat `3N` vector.
    pub fn factor_displacement(&self, i: usize) -> &[f64] {
        &self.vertex_basis[i]
    }

    pub fn template_joints(&self) -> &[Vec3] {
        &self.template_joints
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        crate::error::check_len("latent factors", self.factor_count(), z.len())
    }

    pub fn mesh_at(&self, z: &[f64]) -> Result<Mesh> {
        self.check_z(z)?;
        let vertices = self
            .template
            .vertices
            .iter()
            .enumerate()
            .map(|(v, p)| {
                let mut d = Vec3::zeros();
                for (zi, col) in z.iter().zip(&self.vertex_basis) {
                    d += Vec3::new(col[3 * v], col[3 * v + 1], col[3 * v + 2]) * *zi;
                }
                p + d
            })
            .collect();
        self.template.with_vertices(vertices)
    }

    pub fn joints_at(&self, z: &[f64]) -> Result<Vec<Vec3>> {
        self.check_z(z)?;
        Ok(self
            .template_joints
            .iter()
            .enumerate()
            .map(|(k, j)| j + z.iter().zip(&self.joint_basis).map(|(zi, col)| col[k] * *zi).sum::<Vec3>())
            .collect())
    }

    pub fn eyeballs_at(&self, z: &[f64]) -> Result<BTreeMap<String, EyeTruth>> {
        self.check_z(z)?;
        let (c1, c2) = (self.config.eye_c1, self.config.eye_c2);
        Ok(self
            .sockets
            .iter()
            .map(|(name, center, radius, fields)| {
                let mut c = *center;
                let mut scale = 1.0;
                for (zi, f) in z.iter().zip(fields) {
                    c += displace(*f, center) * *zi;
                    // ring-plane scale of the diagonal map (x and y agree on sockets)
                    scale += f.map_or(0.0, |(d, _)| d.x) * zi;
                }
                let rs = radius * scale;
                let n = Vec3::z();
                let de = c2 * rs;
                let truth = EyeTruth {
                    socket_center: c,
                    socket_radius: rs,
                    socket_normal: n,
                    eye_center: c - n * de,
                    eye_radius: c1 * rs,
                    depth: de,
                };
                (name.clone(), truth)
            })
            .collect())
    }

    pub fn texture_at(&self, z: &[f64]) -> Result<TextureImage> {
        self.check_z(z)?;
        let w = self.config.texture_size;
        let base = [0.55, 0.5, 0.45];
        let unit: Vec<f64> = z
            .iter()
            .zip(&self.config.factors)
            .map(|(zi, f)| {
                if f.max > f.min {
                    (2.0 * zi - (f.min + f.max)) / (f.max - f.min)
                } else {
                    0.0
                }
            })
            .collect();
        let mut pixels = Vec::with_capacity(w * w * 3);
        for y in 0..w {
            for x in 0..w {
                let (u, v) = (x as f64 / w as f64, y as f64 / w as f64);
                for (ch, b) in base.iter().enumerate() {
                    let mut c = *b;
                    for (i, t) in unit.iter().enumerate() {
                        let phase = 2.0 * PI * ((i + 1) as f64 * u + 0.5 * (ch + 1) as f64 * v) + i as f64;
                        c += 0.08 * t * phase.sin();
                    }
                    pixels.push(c);
                }
            }
        }
        TextureImage::new(w, w, pixels)
    }

    pub fn sample_latent(&self, index: usize) -> Vec<f64> {
        let mut rng = XorShift64Star::for_item(self.config.seed, index as u64);
        self.config.factors.iter().map(|f| rng.uniform(f.min, f.max)).collect()
    }

    pub fn sample_with(&self, index: usize, z: Vec<f64>) -> Result<FamilySample> {
        Ok(FamilySample {
            index,
            mesh: self.mesh_at(&z)?,
            joints: self.joints_at(&z)?,
            eyeballs: self.eyeballs_at(&z)?,
            texture: self.texture_at(&z)?,
            z,
        })
    }

    pub fn sample(&self, index: usize) -> Result<FamilySample> {
        self.sample_with(index, self.sample_latent(index))
    }

    pub fn samples(&self, count: usize) -> Result<Vec<FamilySample>> {
        if count == 0 {
            return Err(Error::Invalid("sample count must be at least 1".into()));
        }
        (0..count).map(|i| self.sample(i)).collect()
    }

    pub fn eye_constants(&self) -> EyeConstants {
        EyeConstants {
            c1: self.config.eye_c1,
            c2: self.config.eye_c2,
        }
    }
}

pub fn sample_family(config: &FamilyConfig, count: usize) -> Result<Vec<FamilySample>> {
    Family::new(config)?.samples(count)
}

/// Poses a mesh with an independent reference implementation: quaternion
/// rotations, explicit 4x4 products along each chain and a general 4x4
/// inverse of every rest transform.
pub fn naive_pose(
    vertices: &[Vec3],
    rest_joints: &[Vec3],
    parents: &[Option<usize>],
    weights: &SkinWeights,
    pose: &PoseParams,
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let kc = parents.len();
    crate::error::check_len("rest joints", kc, rest_joints.len())?;
    crate::error::check_len("pose parameters", 3 * kc, pose.0.len())?;
    crate::error::check_len("weight columns", kc, weights.cols())?;
    crate::error::check_len("weight rows", vertices.len(), weights.rows())?;

    let local: Vec<Matrix4<f64>> = (0..kc)
        .map(|k| {
            let axis_angle = Vec3::new(pose.0[3 * k], pose.0[3 * k + 1], pose.0[3 * k + 2]);
            let r = UnitQuaternion::from_scaled_axis(axis_angle).to_rotation_matrix();
            let t = match parents[k] {
                Some(p) => rest_joints[k] - rest_joints[p],
                None => rest_joints[k],
            };
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
            m
        })
        .collect();

    let mut skin = Vec::with_capacity(kc);
    let mut joints = Vec::with_capacity(kc);
    for k in 0..kc {
        let mut chain = vec![k];
        while let Some(p) = parents[*chain.last().expect("non-empty")] {
            chain.push(p);
        }
        let mut g = Matrix4::identity();
        for &a in chain.iter().rev() {
            g *= local[a];
        }
        let mut rest = Matrix4::identity();
        rest.fixed_view_mut::<3, 1>(0, 3).copy_from(&rest_joints[k]);
        let inv = rest
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular rest transform".into()))?;
        let origin = g * Vector4::new(0.0, 0.0, 0.0, 1.0);
        joints.push(origin.xyz());
        skin.push(g * inv);
    }

    let posed = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let h = Vector4::new(v.x, v.y, v.z, 1.0);
            let mut acc = Vector4::zeros();
            for k in 0..kc {
                let w = weights.get(i, k);
                if w != 0.0 {
                    acc += skin[k] * h * w;
                }
            }
            acc.xyz()
        })
        .collect();
    Ok((posed, joints))
}

/// Template posed by [`naive_pose`].
pub fn ground_truth_pose_scene(config: &FamilyConfig, pose: &PoseParams) -> Result<(Mesh, Vec<Vec3>)> {
    let family = Family::new(config)?;
    let parents: Vec<_> = family.skeleton.joints.iter().map(|j| j.parent).collect();
    let (v, j) = naive_pose(
        &family.template.vertices,
        &family.skeleton.rest_joints,
        &parents,
        &family.skeleton.weights,
        pose,
    )?;
    Ok((family.template.with_vertices(v)?, j))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub z: Vec<f64>,
    pub mesh: String,
    pub texture: String,
    pub joints: Vec<[f64; 3]>,
    pub eyeballs: BTreeMap<String, EyeTruth>,
}

/// `family.json`: configuration, shared rig files and per-sample truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyManifest {
    pub config: FamilyConfig,
    pub factor_names: Vec<String>,
    pub topology: TopologySignature,
    pub eye_constants: EyeConstants,
    pub template: String,
    pub landmarks: String,
    pub skeleton: String,
    pub region_labels: Vec<usize>,
    pub eye_socket_patches: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

pub const FAMILY_MANIFEST: &str = "family.json";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the family directory and returns its manifest.
pub fn write_family(dir: impl AsRef<Path>, family: &Family, samples: &[FamilySample]) -> Result<FamilyManifest> {
    let dir = dir.as_ref();
    create_dir(&dir.join("samples"))?;
    create_dir(&dir.join("textures"))?;
    mesh::save_mesh(&family.template, dir.join("template.obj"))?;
    family.landmarks.save(dir.join("landmarks.json"))?;
    family.skeleton.save(dir.join("skeleton.json"))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let mesh_rel = format!("samples/sample_{:04}.obj", s.index);
        let tex_rel = format!("textures/sample_{:04}.png", s.index);
        mesh::save_mesh(&s.mesh, dir.join(&mesh_rel))?;
        s.texture.save_png(dir.join(&tex_rel))?;
        records.push(SampleRecord {
            index: s.index,
            z: s.z.clone(),
            mesh: mesh_rel,
            texture: tex_rel,
            joints: s.joints.iter().map(|j| [j.x, j.y, j.z]).collect(),
            eyeballs: s.eyeballs.clone(),
        });
    }
    let manifest = FamilyManifest {
        config: family.config.clone(),
        factor_names: family.config.factors.iter().map(|f| f.name.clone()).collect(),
        topology: mesh::topology_signature(&family.template),
        eye_constants: family.eye_constants(),
        template: "template.obj".into(),
        landmarks: "landmarks.json".into(),
        skeleton: "skeleton.json".into(),
        region_labels: family.region_labels.clone(),
        eye_socket_patches: family.eye_socket_patches.clone(),
        samples: records,
    };
    let path = dir.join(FAMILY_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

impl FamilyManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(FAMILY_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn resolve(&self, dir: impl AsRef<Path>, rel: &str) -> PathBuf {
        dir.as_ref().join(rel)
    }
}
