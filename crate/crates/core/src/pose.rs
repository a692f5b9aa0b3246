//! Axis-angle pose, forward kinematics and linear blend skinning.
//!
//! Each joint `k` rotates by `R(theta_k)` about its rest location `J_k`.
//! The global transform composes root to leaf with the local translation
//! set to the offset from the parent joint (`J_k - J_parent`, the root
//! uses `J_root`), so the rest pose maps the origin to `J_k`. Skinning uses
//! the rest-relative transform `G'_k = G_k(theta) * G_k(0)^-1`:
//!
//! ```text
//! v'_i = sum_k w_ki * G'_k * v_i
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;
use crate::rig::Skeleton;
use crate::{Error, Mat3, Mat4, Result, Vec3};

/// Below this angle Rodrigues switches to its series expansion.
pub const SMALL_ANGLE: f64 = 1e-12;

fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `R = I + sin(phi) [u]x + (1 - cos(phi)) [u]x^2`, `phi = |theta|`.
pub fn rodrigues(theta: &Vec3) -> Mat3 {
    let phi = theta.norm();
    let k = skew(theta);
    let (a, b) = if phi < SMALL_ANGLE {
        let p2 = phi * phi;
        (1.0 - p2 / 6.0, 0.5 - p2 / 24.0)
    } else {
        let half = (0.5 * phi).sin();
        (phi.sin() / phi, 2.0 * half * half / (phi * phi))
    };
    Mat3::identity() + k * a + k * k * b
}

/// Partial derivatives `dR/dtheta_x`, `dR/dtheta_y`, `dR/dtheta_z`.
pub fn rodrigues_derivatives(theta: &Vec3) -> [Mat3; 3] {
    let phi = theta.norm();
    let p2 = phi * phi;
    // R = I + a K + b K^2 with K = [theta]x; a, b and their
    // derivatives divided by phi
    let (a, b, da, db) = if phi < 1e-3 {
        (
            1.0 - p2 / 6.0 + p2 * p2 / 120.0,
            0.5 - p2 / 24.0 + p2 * p2 / 720.0,
            -1.0 / 3.0 + p2 / 30.0,
            -1.0 / 12.0 + p2 / 180.0,
        )
    } else {
        let (s, c) = phi.sin_cos();
        let half = (0.5 * phi).sin();
        let one_minus_c = 2.0 * half * half;
        (
            s / phi,
            one_minus_c / p2,
            (phi * c - s) / (p2 * phi),
            (phi * s - 2.0 * one_minus_c) / (p2 * p2),
        )
    };
    let k = skew(theta);
    let k2 = k * k;
    let mut out = [Mat3::zeros(); 3];
    for (j, d) in out.iter_mut().enumerate() {
        let e = skew(&Vec3::ith(j, 1.0));
        *d = e * a + (e * k + k * e) * b + (k * da + k2 * db) * theta[j];
    }
    out
}

/// Flattened axis-angle triples, one per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseParams(pub Vec<f64>);

impl PoseParams {
    pub fn zeros(joints: usize) -> Self {
        Self(vec![0.0; 3 * joints])
    }

    pub fn joint_count(&self) -> usize {
        self.0.len() / 3
    }

    pub fn joint(&self, k: usize) -> Vec3 {
        Vec3::new(self.0[3 * k], self.0[3 * k + 1], self.0[3 * k + 2])
    }

    pub fn set_joint(&mut self, k: usize, v: &Vec3) {
        self.0[3 * k..3 * k + 3].copy_from_slice(v.as_slice());
    }
}

/// Per-joint rotation and translations of the posed skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransforms {
    /// Accumulated rotation, shared by `G_k` and `G'_k`.
    pub rotations: Vec<Mat3>,
    /// Translation of `G_k`: the posed joint location.
    pub joint_positions: Vec<Vec3>,
    /// Translation of `G'_k`. Exactly zero at the rest pose.
    pub relative_translations: Vec<Vec3>,
}

impl JointTransforms {
    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    /// `G_k` as a homogeneous matrix.
    pub fn global(&self, k: usize) -> Mat4 {
        homogeneous(&self.rotations[k], &self.joint_positions[k])
    }

    /// `G'_k` as a homogeneous matrix.
    pub fn relative(&self, k: usize) -> Mat4 {
        homogeneous(&self.rotations[k], &self.relative_translations[k])
    }

    pub fn apply_relative(&self, k: usize, p: &Vec3) -> Vec3 {
        self.rotations[k] * p + self.relative_translations[k]
    }
}

pub(crate) fn homogeneous(r: &Mat3, t: &Vec3) -> Mat4 {
    let mut m = Mat4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

pub fn forward_kinematics(sk: &Skeleton, pose: &PoseParams) -> Result<JointTransforms> {
    forward_kinematics_with_joints(sk, &sk.rest_joints, pose)
}

/// Forward kinematics with explicit rest joint locations, used when the
/// joints follow a shape that differs from the skeleton's stored rest pose.
pub fn forward_kinematics_with_joints(sk: &Skeleton, rest: &[Vec3], pose: &PoseParams) -> Result<JointTransforms> {
    let k_count = sk.joint_count();
    crate::error::check_len("pose parameters", 3 * k_count, pose.0.len())?;
    crate::error::check_len("rest joints", k_count, rest.len())?;
    let mut rotations = Vec::with_capacity(k_count);
    let mut joint_positions = Vec::with_capacity(k_count);
    let mut relative_translations = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let local = rodrigues(&pose.joint(k));
        let j = rest[k];
        // G'_k = G'_p * (x -> R_k (x - J_k) + J_k)
        let (rot, pos, rel) = match sk.parent(k) {
            None => (local, j, j - local * j),
            Some(p) => {
                let (rp, gp, bp) = (&rotations[p], &joint_positions[p], &relative_translations[p]);
                let rot: Mat3 = rp * local;
                (rot, rp * (j - rest[p]) + gp, rp * (j - local * j) + bp)
            }
        };
        rotations.push(rot);
        joint_positions.push(pos);
        relative_translations.push(rel);
    }
    Ok(JointTransforms {
        rotations,
        joint_positions,
        relative_translations,
    })
}

/// Blends the rest-relative joint transforms per vertex. Displacements are
/// accumulated so that identity transforms reproduce the input bit for bit.
pub fn apply_lbs(mesh: &Mesh, sk: &Skeleton, transforms: &JointTransforms) -> Result<Mesh> {
    mesh.with_vertices(skin_vertices(&mesh.vertices, sk, transforms)?)
}

pub(crate) fn skin_vertices(vertices: &[Vec3], sk: &Skeleton, transforms: &JointTransforms) -> Result<Vec<Vec3>> {
    crate::error::check_len("weight rows", vertices.len(), sk.weights.rows())?;
    crate::error::check_len("joint transforms", sk.joint_count(), transforms.len())?;
    Ok(vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut d = Vec3::zeros();
            for (k, w) in sk.weights.nonzeros(i) {
                d += (transforms.apply_relative(k, v) - v) * w;
            }
            v + d
        })
        .collect())
}

pub fn pose_mesh(mesh: &Mesh, sk: &Skeleton, pose: &PoseParams) -> Result<Mesh> {
    sk.check_ready(mesh.vertex_count())?;
    apply_lbs(mesh, sk, &forward_kinematics(sk, pose)?)
}

/// Posed joint locations `G'_k J_k`.
pub fn extract_joints(transforms: &JointTransforms) -> Vec<Vec3> {
    transforms.joint_positions.clone()
}

/// One correspondence of a retarget map. `conjugate_axis_angle` is the
/// fixed rotation `C` applied as `R_dst = C R_src C^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetPair {
    pub src: String,
    pub dst: String,
    #[serde(default)]
    pub conjugate_axis_angle: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetargetMap {
    pub pairs: Vec<RetargetPair>,
    /// Source joint order; defaults to the standard biped names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_joints: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_joints: Option<Vec<String>>,
}

impl RetargetMap {
    /// Map going the other way: swapped names, inverse conjugation.
    pub fn inverse(&self) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .map(|p| RetargetPair {
                    src: p.dst.clone(),
                    dst: p.src.clone(),
                    conjugate_axis_angle: p.conjugate_axis_angle.map(|c| -c),
                })
                .collect(),
            src_joints: self.dst_joints.clone(),
            dst_joints: self.src_joints.clone(),
        }
    }
}

/// Copies per-joint rotations across skeletons. Conjugating an axis-angle
/// rotation by `C` rotates its axis, so `theta_dst = C theta_src`.
/// Unmapped destination joints get zero rotation.
pub fn retarget_pose(
    src_pose: &PoseParams,
    src_names: &[String],
    dst_names: &[String],
    map: &RetargetMap,
) -> Result<PoseParams> {
    crate::error::check_len("source pose", 3 * src_names.len(), src_pose.0.len())?;
    let mut out = PoseParams::zeros(dst_names.len());
    for pair in &map.pairs {
        let s = src_names
            .iter()
            .position(|n| *n == pair.src)
            .ok_or_else(|| Error::UnknownName(format!("source joint {:?}", pair.src)))?;
        let d = dst_names
            .iter()
            .position(|n| *n == pair.dst)
            .ok_or_else(|| Error::UnknownName(format!("target joint {:?}", pair.dst)))?;
        let c = rodrigues(&Vec3::from(pair.conjugate_axis_angle));
        out.set_joint(d, &(c * src_pose.joint(s)));
    }
    Ok(out)
}

/// `{"fps": f, "frames": [[69 floats], ...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    pub fps: f64,
    pub frames: Vec<Vec<f64>>,
}

impl PoseSequence {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{default_skeleton, Joint, SkinWeights};
    use crate::rng::XorShift64Star;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn chain(n: usize, spacing: Vec3) -> Skeleton {
        let mut sk = Skeleton::new(
            (0..n)
                .map(|i| Joint {
                    name: format!("j{i}"),
                    parent: i.checked_sub(1),
                    patch_a: String::new(),
                    patch_b: String::new(),
                })
                .collect(),
        )
        .unwrap();
        sk.rest_joints = (0..n).map(|i| spacing * i as f64).collect();
        sk
    }

    fn max_abs(m: &Mat3) -> f64 {
        m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    #[test]
    fn rodrigues_examples() {
        assert_eq!(rodrigues(&Vec3::zeros()), Mat3::identity());
        let qx = rodrigues(&Vec3::new(FRAC_PI_2, 0.0, 0.0));
        let expect = Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!(max_abs(&(qx - expect)) < 1e-15);
        let hz = rodrigues(&Vec3::new(0.0, 0.0, PI));
        assert!(max_abs(&(hz - Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)))) < 1e-15);
    }

    #[test]
    fn rodrigues_is_a_rotation() {
        let mut rng = XorShift64Star::new(4);
        for i in 0..2000 {
            let dir = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
            let mag = match i % 5 {
                0 => 0.0,
                1 => 1e-15,
                2 => 1e-8,
                3 => PI,
                _ => rng.uniform(0.0, 10.0),
            };
            let r = rodrigues(&(dir * mag));
            assert!(max_abs(&(r.transpose() * r - Mat3::identity())) <= 1e-12);
            assert!((r.determinant() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = XorShift64Star::new(8);
        for i in 0..200 {
            let scale = [1e-5, 1e-3 * 0.999, 1e-3 * 1.001, 0.5, 3.0][i % 5];
            let t = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize() * scale;
            let d = rodrigues_derivatives(&t);
            for (j, dj) in d.iter().enumerate() {
                let h = 1e-6;
                let fd = (rodrigues(&(t + Vec3::ith(j, h))) - rodrigues(&(t - Vec3::ith(j, h)))) / (2.0 * h);
                assert!(max_abs(&(fd - dj)) < 1e-8, "scale {scale} axis {j}");
            }
        }
        // at zero the derivative is the generator
        let d0 = rodrigues_derivatives(&Vec3::zeros());
        for (j, dj) in d0.iter().enumerate() {
            assert_eq!(*dj, skew(&Vec3::ith(j, 1.0)));
        }
    }

    #[test]
    fn rest_pose_is_identity() {
        let mut sk = default_skeleton();
        let mut rng = XorShift64Star::new(1);
        sk.rest_joints = (0..23).map(|_| Vec3::new(rng.normal(), rng.normal(), rng.normal())).collect();
        let t = forward_kinematics(&sk, &PoseParams::zeros(23)).unwrap();
        for k in 0..23 {
            assert_eq!(t.relative(k), Mat4::identity());
            assert!((t.joint_positions[k] - sk.rest_joints[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn single_joint_quarter_turn() {
        let mut sk = chain(1, Vec3::zeros());
        sk = sk.with_weights(SkinWeights::new(1, 1, vec![1.0]).unwrap()).unwrap();
        let pose = PoseParams(vec![FRAC_PI_2, 0.0, 0.0]);
        let t = forward_kinematics(&sk, &pose).unwrap();
        assert!(max_abs(&(t.rotations[0] - rodrigues(&pose.joint(0)))) == 0.0);
        assert_eq!(t.relative_translations[0], Vec3::zeros());
        let m = Mesh::new(vec![Vec3::new(0.0, 1.0, 0.0)], vec![], vec![[0.0; 2]]).unwrap();
        let posed = apply_lbs(&m, &sk, &t).unwrap();
        assert!((posed.vertices[0] - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn chain_matches_explicit_products() {
        let mut rng = XorShift64Star::new(12);
        let mut sk = chain(3, Vec3::new(1.0, 0.0, 0.0));
        sk.rest_joints[2] += Vec3::new(0.0, 0.5, 0.0);
        for _ in 0..50 {
            let pose = PoseParams((0..9).map(|_| rng.uniform(-2.0, 2.0)).collect());
            let t = forward_kinematics(&sk, &pose).unwrap();
            let mut g = Mat4::identity();
            for k in 0..3 {
                let off = match k {
                    0 => sk.rest_joints[0],
                    _ => sk.rest_joints[k] - sk.rest_joints[k - 1],
                };
                g *= homogeneous(&rodrigues(&pose.joint(k)), &off);
                let rest_inv = homogeneous(&Mat3::identity(), &-sk.rest_joints[k]);
                let rel = g * rest_inv;
                assert!((t.global(k) - g).abs().max() < 1e-12);
                assert!((t.relative(k) - rel).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn ancestor_locality() {
        let mut sk = default_skeleton();
        let mut rng = XorShift64Star::new(6);
        sk.rest_joints = (0..23).map(|_| Vec3::new(rng.normal(), rng.normal(), rng.normal())).collect();
        let base = PoseParams((0..69).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let t0 = forward_kinematics(&sk, &base).unwrap();
        for j in 0..23 {
            let mut p = base.clone();
            p.0[3 * j] += 0.3;
            let t1 = forward_kinematics(&sk, &p).unwrap();
            for k in 0..23 {
                // theta_j moves joint k only through a strict ancestor
                let moves = k != j && sk.is_ancestor_or_self(j, k);
                if !moves {
                    assert!((t1.joint_positions[k] - t0.joint_positions[k]).norm() <= 1e-12, "j={j} k={k}");
                }
            }
        }
    }

    #[test]
    fn retarget_identity_empty_and_round_trip() {
        let names = default_skeleton().joint_names();
        let mut rng = XorShift64Star::new(2);
        let pose = PoseParams((0..69).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let identity = RetargetMap {
            pairs: names
                .iter()
                .map(|n| RetargetPair { src: n.clone(), dst: n.clone(), conjugate_axis_angle: [0.0; 3] })
                .collect(),
            ..Default::default()
        };
        assert_eq!(retarget_pose(&pose, &names, &names, &identity).unwrap(), pose);
        let empty = RetargetMap::default();
        assert_eq!(retarget_pose(&pose, &names, &names, &empty).unwrap(), PoseParams::zeros(23));

        let mut flip = identity.clone();
        for p in flip.pairs.iter_mut().filter(|p| p.src.starts_with("shoulder")) {
            p.conjugate_axis_angle = [0.0, PI, 0.0];
        }
        let there = retarget_pose(&pose, &names, &names, &flip).unwrap();
        let back = retarget_pose(&there, &names, &names, &flip.inverse()).unwrap();
        for (a, b) in back.0.iter().zip(&pose.0) {
            assert!((a - b).abs() <= 1e-10);
        }
        // conjugation holds at the matrix level
        let k = names.iter().position(|n| n == "shoulder_L").unwrap();
        let c = rodrigues(&Vec3::new(0.0, PI, 0.0));
        let lhs = rodrigues(&there.joint(k));
        let rhs = c * rodrigues(&pose.joint(k)) * c.transpose();
        assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn retarget_unknown_joint() {
        let names = default_skeleton().joint_names();
        let map = RetargetMap {
            pairs: vec![RetargetPair { src: "nope".into(), dst: "pelvis".into(), conjugate_axis_angle: [0.0; 3] }],
            ..Default::default()
        };
        assert!(matches!(
            retarget_pose(&PoseParams::zeros(23), &names, &names, &map),
            Err(Error::UnknownName(_))
        ));
    }
}
