//! The shaped and posed body: `F_P(F_S(beta), theta)`.

use crate::eye::{self, EyeballFit};
use crate::mesh::Mesh;
use crate::pose::{self, JointTransforms, PoseParams};
use crate::rig::{self, JointRegressor, LandmarkSet, Skeleton};
use crate::shape::{ShapeModel, ShapeParams};
use crate::{Error, Result, Vec3};

/// Shape space, skeleton (weights on the shared topology) and the landmark
/// patches that localize joints on every shaped mesh.
#[derive(Debug, Clone)]
pub struct BodyModel {
    pub shape: ShapeModel,
    /// Rest joints are those of the mean shape.
    pub skeleton: Skeleton,
    pub landmarks: LandmarkSet,
}

/// Everything computed by one forward evaluation.
#[derive(Debug, Clone)]
pub struct PosedBody {
    pub rest_vertices: Vec<Vec3>,
    pub rest_joints: Vec<Vec3>,
    /// Extreme-vertex selection that produced `rest_joints`.
    pub regressor: JointRegressor,
    pub transforms: JointTransforms,
    pub vertices: Vec<Vec3>,
    pub joints: Vec<Vec3>,
}

impl BodyModel {
    pub fn new(shape: ShapeModel, skeleton: Skeleton, landmarks: LandmarkSet) -> Result<Self> {
        let n = shape.vertex_count();
        landmarks.validate(n)?;
        if skeleton.weights.rows() != n {
            return Err(Error::Dimension {
                what: "weight rows",
                expected: n,
                got: skeleton.weights.rows(),
            });
        }
        let skeleton = rig::compute_rest_joints(&shape.mean, &landmarks, &skeleton)?;
        Ok(Self {
            shape,
            skeleton,
            landmarks,
        })
    }

    pub fn shape_dim(&self) -> usize {
        self.shape.n_components()
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn pose_dim(&self) -> usize {
        3 * self.joint_count()
    }

    pub fn vertex_count(&self) -> usize {
        self.shape.vertex_count()
    }

    pub fn forward(&self, beta: &ShapeParams, theta: &PoseParams) -> Result<PosedBody> {
        let rest_vertices = self.shape.eval_vertices(beta)?;
        self.forward_from_rest(rest_vertices, theta)
    }

    /// Poses an arbitrary rest mesh on the shared topology; joints are
    /// localized on that mesh from the landmark patches.
    pub fn forward_from_rest(&self, rest_vertices: Vec<Vec3>, theta: &PoseParams) -> Result<PosedBody> {
        crate::error::check_len("rest vertices", self.vertex_count(), rest_vertices.len())?;
        let rest_mesh = self.shape.mean.with_vertices(rest_vertices)?;
        let regressor = JointRegressor::from_landmarks(&rest_mesh, &self.landmarks, &self.skeleton)?;
        let rest_joints = regressor.apply(&rest_mesh.vertices);
        let transforms = pose::forward_kinematics_with_joints(&self.skeleton, &rest_joints, theta)?;
        let vertices = pose::skin_vertices(&rest_mesh.vertices, &self.skeleton, &transforms)?;
        let joints = pose::extract_joints(&transforms);
        Ok(PosedBody {
            rest_vertices: rest_mesh.vertices,
            rest_joints,
            regressor,
            transforms,
            vertices,
            joints,
        })
    }

    pub fn posed_mesh(&self, beta: &ShapeParams, theta: &PoseParams) -> Result<Mesh> {
        self.shape.mean.with_vertices(self.forward(beta, theta)?.vertices)
    }

    /// Eyeballs from the eye-socket patches (`eye_socket*`) of a posed body.
    /// The outward direction is the head joint's rotated +z axis.
    pub fn eyeballs(&self, posed: &PosedBody, c1: f64, c2: f64) -> Result<Vec<(String, EyeballFit)>> {
        let head = self.skeleton.index_of("head").ok();
        let outward = head.map_or(Vec3::z(), |h| posed.transforms.rotations[h] * Vec3::z());
        self.landmarks
            .patches
            .iter()
            .filter(|(name, _)| name.starts_with("eye_socket"))
            .map(|(name, idx)| {
                let pts: Vec<Vec3> = idx.iter().map(|&i| posed.vertices[i]).collect();
                let socket = eye::fit_socket_circle(&pts, &outward)?;
                Ok((name.clone(), eye::reconstruct_eyeball(&socket, c1, c2)?))
            })
            .collect()
    }
}
