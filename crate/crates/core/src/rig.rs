//! Landmark patches, joint localization and the skeleton definition.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;
use crate::{Error, Result, Vec3};

/// Named vertex-index patches on the shared topology.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub patches: BTreeMap<String, Vec<usize>>,
}

impl LandmarkSet {
    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        for (name, idx) in &self.patches {
            if idx.is_empty() {
                return Err(Error::Invalid(format!("landmark patch {name:?} is empty")));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= vertex_count) {
                return Err(Error::IndexOutOfRange {
                    what: "vertices",
                    index: bad,
                    len: vertex_count,
                });
            }
        }
        Ok(())
    }

    pub fn patch(&self, name: &str) -> Result<&[usize]> {
        let p = self
            .patches
            .get(name)
            .ok_or_else(|| Error::UnknownName(format!("landmark patch {name:?}")))?;
        if p.is_empty() {
            return Err(Error::Invalid(format!("landmark patch {name:?} is empty")));
        }
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// `None` for the root.
    pub parent: Option<usize>,
    pub patch_a: String,
    pub patch_b: String,
}

/// Dense `vertices × joints` skinning weights, row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkinWeights {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SkinWeights {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "weight entries",
                expected: rows * cols,
                got: data.len(),
            });
        }
        let w = Self { rows, cols, data };
        w.validate()?;
        Ok(w)
    }

    /// Scales every row to sum to one; rejects negative or all-zero rows.
    pub fn normalized(rows: usize, cols: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "weight entries",
                expected: rows * cols,
                got: data.len(),
            });
        }
        for (i, row) in data.chunks_mut(cols.max(1)).enumerate().take(rows) {
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Invalid(format!("weight row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::Invalid(format!("weight row {i} sums to zero")));
            }
            if s != 1.0 {
                row.iter_mut().for_each(|w| *w /= s);
            }
        }
        Self::new(rows, cols, data)
    }

    fn validate(&self) -> Result<()> {
        for (i, row) in self.data.chunks(self.cols.max(1)).enumerate().take(self.rows) {
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Invalid(format!("weight row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("weight row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, vertex: usize, joint: usize) -> f64 {
        self.data[vertex * self.cols + joint]
    }

    /// Non-zero `(joint, weight)` entries of one vertex.
    pub fn nonzeros(&self, vertex: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.row(vertex)
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, w)| *w != 0.0)
    }
}

/// Joint tree, rest joint locations and skinning weights.
///
/// Joints are stored in topological order: every parent index is smaller
/// than its child's index.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    /// Empty until [`compute_rest_joints`] fills it.
    pub rest_joints: Vec<Vec3>,
    /// Zero rows until assigned.
    pub weights: SkinWeights,
}

pub const DEFAULT_JOINT_COUNT: usize = 23;

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        let sk = Self {
            joints,
            rest_joints: Vec::new(),
            weights: SkinWeights::default(),
        };
        sk.validate_tree()?;
        Ok(sk)
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.joints[k].parent
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.joints.iter().map(|j| j.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.joints
            .iter()
            .position(|j| j.name == name)
            .ok_or_else(|| Error::UnknownName(format!("joint {name:?}")))
    }

    /// Ancestors of `k` including `k`, root first.
    pub fn chain(&self, k: usize) -> Vec<usize> {
        let mut out = vec![k];
        let mut cur = k;
        while let Some(p) = self.joints[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn is_ancestor_or_self(&self, ancestor: usize, k: usize) -> bool {
        let mut cur = Some(k);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.joints[c].parent;
        }
        false
    }

    fn validate_tree(&self) -> Result<()> {
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::Invalid(format!("skeleton has {roots} roots, expected 1")));
        }
        if self.joints[0].parent.is_some() {
            return Err(Error::Invalid("joint 0 must be the root".into()));
        }
        for (k, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= k {
                    return Err(Error::Invalid(format!(
                        "joint {k} ({}) has parent {p}; parents must precede children",
                        j.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn with_weights(mut self, weights: SkinWeights) -> Result<Self> {
        if weights.cols() != self.joint_count() {
            return Err(Error::Dimension {
                what: "weight columns",
                expected: self.joint_count(),
                got: weights.cols(),
            });
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn has_rest_joints(&self) -> bool {
        self.rest_joints.len() == self.joints.len()
    }

    /// Checks the skeleton can pose a mesh with `vertex_count` vertices.
    pub fn check_ready(&self, vertex_count: usize) -> Result<()> {
        if !self.has_rest_joints() {
            return Err(Error::Invalid("skeleton rest joints are not computed".into()));
        }
        if self.weights.rows() != vertex_count {
            return Err(Error::Dimension {
                what: "weight rows",
                expected: vertex_count,
                got: self.weights.rows(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> SkeletonJson {
        SkeletonJson {
            joints: self
                .joints
                .iter()
                .map(|j| JointJson {
                    name: j.name.clone(),
                    parent: j.parent.map_or(-1, |p| p as i64),
                    patch_a: j.patch_a.clone(),
                    patch_b: j.patch_b.clone(),
                })
                .collect(),
            rest_joints: (!self.rest_joints.is_empty())
                .then(|| self.rest_joints.iter().map(|p| [p.x, p.y, p.z]).collect()),
            weights: WeightsJson {
                encoding: "dense-row-major".into(),
                rows: self.weights.rows(),
                cols: self.weights.cols(),
                data: self.weights.data().to_vec(),
            },
        }
    }

    pub fn from_json(doc: SkeletonJson) -> Result<Self> {
        let joints = doc
            .joints
            .into_iter()
            .map(|j| Joint {
                name: j.name,
                parent: (j.parent >= 0).then_some(j.parent as usize),
                patch_a: j.patch_a,
                patch_b: j.patch_b,
            })
            .collect();
        let mut sk = Skeleton::new(joints)?;
        if let Some(rj) = doc.rest_joints {
            if rj.len() != sk.joint_count() {
                return Err(Error::Dimension {
                    what: "rest joints",
                    expected: sk.joint_count(),
                    got: rj.len(),
                });
            }
            sk.rest_joints = rj.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
        }
        if doc.weights.encoding != "dense-row-major" {
            return Err(Error::Invalid(format!("unsupported weight encoding {:?}", doc.weights.encoding)));
        }
        if doc.weights.rows > 0 {
            let w = SkinWeights::normalized(doc.weights.rows, doc.weights.cols, doc.weights.data)?;
            sk = sk.with_weights(w)?;
        }
        Ok(sk)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(&self.to_json())?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointJson {
    pub name: String,
    pub parent: i64,
    pub patch_a: String,
    pub patch_b: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsJson {
    pub encoding: String,
    #[serde(default)]
    pub rows: usize,
    #[serde(default)]
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonJson {
    pub joints: Vec<JointJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_joints: Option<Vec<[f64; 3]>>,
    pub weights: WeightsJson,
}

/// Joint names of the default biped, in storage order, with parents.
pub const DEFAULT_JOINTS: [(&str, Option<usize>); DEFAULT_JOINT_COUNT] = [
    ("pelvis", None),
    ("spine1", Some(0)),
    ("spine2", Some(1)),
    ("chest", Some(2)),
    ("neck", Some(3)),
    ("head", Some(4)),
    ("tail_root", Some(0)),
    ("clavicle_L", Some(3)),
    ("shoulder_L", Some(7)),
    ("elbow_L", Some(8)),
    ("wrist_L", Some(9)),
    ("clavicle_R", Some(3)),
    ("shoulder_R", Some(11)),
    ("elbow_R", Some(12)),
    ("wrist_R", Some(13)),
    ("hip_L", Some(0)),
    ("knee_L", Some(15)),
    ("ankle_L", Some(16)),
    ("toe_L", Some(17)),
    ("hip_R", Some(0)),
    ("knee_R", Some(19)),
    ("ankle_R", Some(20)),
    ("toe_R", Some(21)),
];

/// The 23-joint biped tree rooted at the pelvis. Joint `name` is localized
/// from patches `name_a` and `name_b`. Rest joints and weights are empty.
pub fn default_skeleton() -> Skeleton {
    let joints = DEFAULT_JOINTS
        .iter()
        .map(|&(name, parent)| Joint {
            name: name.to_string(),
            parent,
            patch_a: format!("{name}_a"),
            patch_b: format!("{name}_b"),
        })
        .collect();
    Skeleton::new(joints).expect("default skeleton is a valid tree")
}

/// Center of the axis-aligned bounding box of the union of two patches.
pub fn joint_from_patches(mesh: &Mesh, lm: &LandmarkSet, patch_a: &str, patch_b: &str) -> Result<Vec3> {
    let a = lm.patch(patch_a)?;
    let b = lm.patch(patch_b)?;
    let n = mesh.vertex_count();
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in a.iter().chain(b) {
        let p = mesh.vertices.get(i).ok_or(Error::IndexOutOfRange {
            what: "vertices",
            index: i,
            len: n,
        })?;
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Ok((lo + hi) * 0.5)
}

pub fn compute_rest_joints(mesh: &Mesh, lm: &LandmarkSet, sk: &Skeleton) -> Result<Skeleton> {
    let rest = sk
        .joints
        .iter()
        .map(|j| joint_from_patches(mesh, lm, &j.patch_a, &j.patch_b))
        .collect::<Result<Vec<_>>>()?;
    let mut out = sk.clone();
    out.rest_joints = rest;
    Ok(out)
}

/// Linear joint localization frozen from a reference mesh.
///
/// For every joint and axis the bounding-box center is `(min + max) / 2`;
/// freezing which vertices attain the min and max on the reference mesh
/// turns localization into a sparse linear map. It agrees exactly with
/// [`joint_from_patches`] on every mesh where those extreme vertices stay
/// extreme, and it is what the fitter differentiates through.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRegressor {
    /// `[joint][axis] = (argmin vertex, argmax vertex)`.
    extremes: Vec<[(usize, usize); 3]>,
}

impl JointRegressor {
    pub fn from_landmarks(mesh: &Mesh, lm: &LandmarkSet, sk: &Skeleton) -> Result<Self> {
        let n = mesh.vertex_count();
        let mut extremes = Vec::with_capacity(sk.joint_count());
        for j in &sk.joints {
            let a = lm.patch(&j.patch_a)?;
            let b = lm.patch(&j.patch_b)?;
            let mut ext = [(usize::MAX, usize::MAX); 3];
            for (axis, e) in ext.iter_mut().enumerate() {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &i in a.iter().chain(b) {
                    let p = mesh.vertices.get(i).ok_or(Error::IndexOutOfRange {
                        what: "vertices",
                        index: i,
                        len: n,
                    })?;
                    if p[axis] < lo {
                        lo = p[axis];
                        e.0 = i;
                    }
                    if p[axis] > hi {
                        hi = p[axis];
                        e.1 = i;
                    }
                }
            }
            extremes.push(ext);
        }
        Ok(Self { extremes })
    }

    pub fn joint_count(&self) -> usize {
        self.extremes.len()
    }

    pub fn apply(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        self.extremes
            .iter()
            .map(|ext| {
                Vec3::new(
                    0.5 * (vertices[ext[0].0].x + vertices[ext[0].1].x),
                    0.5 * (vertices[ext[1].0].y + vertices[ext[1].1].y),
                    0.5 * (vertices[ext[2].0].z + vertices[ext[2].1].z),
                )
            })
            .collect()
    }

    /// Same map on a flat `[x0, y0, z0, ...]` displacement vector.
    pub fn apply_flat(&self, flat: &[f64]) -> Vec<Vec3> {
        self.extremes
            .iter()
            .map(|ext| {
                Vec3::from_fn(|axis, _| {
                    0.5 * (flat[3 * ext[axis].0 + axis] + flat[3 * ext[axis].1 + axis])
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::XorShift64Star;

    fn points_mesh(points: &[Vec3]) -> Mesh {
        Mesh::new(points.to_vec(), Vec::new(), vec![[0.0; 2]; points.len()]).unwrap()
    }

    fn lm(pairs: &[(&str, Vec<usize>)]) -> LandmarkSet {
        LandmarkSet {
            patches: pairs.iter().map(|(n, v)| (n.to_string(), v.clone())).collect(),
        }
    }

    #[test]
    fn union_bbox_center() {
        let m = points_mesh(&[
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(0.0, 4.0, 0.0),
        ]);
        let l = lm(&[("a", vec![0, 1]), ("b", vec![2, 3])]);
        assert_eq!(joint_from_patches(&m, &l, "a", "b").unwrap(), Vec3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn single_point_patches() {
        let p = Vec3::new(0.3, -1.2, 7.0);
        let m = points_mesh(&[p]);
        let l = lm(&[("a", vec![0]), ("b", vec![0])]);
        assert_eq!(joint_from_patches(&m, &l, "a", "b").unwrap(), p);
    }

    #[test]
    fn unknown_and_empty_patches() {
        let m = points_mesh(&[Vec3::zeros()]);
        let l = lm(&[("a", vec![0]), ("e", vec![])]);
        assert!(matches!(joint_from_patches(&m, &l, "a", "zz"), Err(Error::UnknownName(_))));
        assert!(matches!(joint_from_patches(&m, &l, "a", "e"), Err(Error::Invalid(_))));
    }

    #[test]
    fn random_patches_match_minmax_scan() {
        let mut rng = XorShift64Star::new(11);
        for _ in 0..50 {
            let pts: Vec<Vec3> = (0..30)
                .map(|_| Vec3::new(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)))
                .collect();
            let a: Vec<usize> = (0..1 + rng.below(10)).map(|_| rng.below(30)).collect();
            let b: Vec<usize> = (0..1 + rng.below(10)).map(|_| rng.below(30)).collect();
            let m = points_mesh(&pts);
            let l = lm(&[("a", a.clone()), ("b", b.clone())]);
            let got = joint_from_patches(&m, &l, "a", "b").unwrap();
            let mut expect = [0.0; 3];
            for (axis, e) in expect.iter_mut().enumerate() {
                let mut mn = f64::MAX;
                let mut mx = f64::MIN;
                for &i in a.iter().chain(&b) {
                    if pts[i][axis] < mn {
                        mn = pts[i][axis];
                    }
                    if pts[i][axis] > mx {
                        mx = pts[i][axis];
                    }
                }
                *e = (mn + mx) / 2.0;
            }
            assert_eq!(got, Vec3::from(expect));
        }
    }

    #[test]
    fn default_tree_shape() {
        let sk = default_skeleton();
        assert_eq!(sk.joint_count(), 23);
        assert_eq!(sk.joint_count() * 3, 69);
        assert_eq!(sk.joints.iter().filter(|j| j.parent.is_none()).count(), 1);
        for k in 0..sk.joint_count() {
            assert!(sk.is_ancestor_or_self(0, k), "pelvis must reach {k}");
            assert_eq!(sk.chain(k)[0], 0);
        }
    }

    #[test]
    fn rejects_cycles_and_two_roots() {
        let mk = |parents: &[Option<usize>]| {
            Skeleton::new(
                parents
                    .iter()
                    .enumerate()
                    .map(|(i, p)| Joint {
                        name: format!("j{i}"),
                        parent: *p,
                        patch_a: String::new(),
                        patch_b: String::new(),
                    })
                    .collect(),
            )
        };
        assert!(mk(&[None, Some(0), Some(1)]).is_ok());
        assert!(mk(&[None, None]).is_err());
        assert!(mk(&[None, Some(2), Some(1)]).is_err());
    }

    #[test]
    fn weights_normalized_on_load() {
        let mut sk = default_skeleton();
        let mut data = vec![0.0; 2 * 23];
        data[0] = 2.0;
        data[1] = 2.0;
        data[23 + 5] = 0.5;
        let mut doc = sk.to_json();
        doc.weights = WeightsJson {
            encoding: "dense-row-major".into(),
            rows: 2,
            cols: 23,
            data,
        };
        sk = Skeleton::from_json(doc).unwrap();
        assert_eq!(sk.weights.get(0, 0), 0.5);
        assert_eq!(sk.weights.get(1, 5), 1.0);
        for i in 0..2 {
            assert!((sk.weights.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn skeleton_json_round_trip() {
        let mut sk = default_skeleton();
        sk.rest_joints = (0..23).map(|k| Vec3::new(k as f64, 0.1, -0.2)).collect();
        let w = SkinWeights::new(1, 23, (0..23).map(|k| if k == 3 { 1.0 } else { 0.0 }).collect()).unwrap();
        sk = sk.with_weights(w).unwrap();
        let text = serde_json::to_string(&sk.to_json()).unwrap();
        let back = Skeleton::from_json(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, sk);
        assert!(text.contains("\"parent\":-1"));
    }

    #[test]
    fn regressor_matches_bbox_on_reference() {
        let mut rng = XorShift64Star::new(3);
        let pts: Vec<Vec3> = (0..40)
            .map(|_| Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
            .collect();
        let m = points_mesh(&pts);
        let sk = Skeleton::new(vec![
            Joint { name: "r".into(), parent: None, patch_a: "a".into(), patch_b: "b".into() },
            Joint { name: "c".into(), parent: Some(0), patch_a: "b".into(), patch_b: "c".into() },
        ])
        .unwrap();
        let l = lm(&[("a", (0..10).collect()), ("b", (10..25).collect()), ("c", (25..40).collect())]);
        let reg = JointRegressor::from_landmarks(&m, &l, &sk).unwrap();
        let via_bbox = compute_rest_joints(&m, &l, &sk).unwrap().rest_joints;
        assert_eq!(reg.apply(&pts), via_bbox);
        assert_eq!(reg.apply_flat(&m.flat_positions()), via_bbox);
    }
}
