//! Request and response bodies of the HTTP service.

use serde::{Deserialize, Serialize};

use crate::bundle::{ModelBundle, Scene};
use crate::fit::{self, FitConfig, FitParams, FitResult};
use crate::pose::PoseParams;
use crate::shape::ShapeParams;
use crate::{Error, Result};

/// Missing vectors mean zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tex: Option<Vec<f64>>,
}

impl EvalRequest {
    pub fn resolve(&self, bundle: &ModelBundle) -> Result<(ShapeParams, PoseParams, Vec<f64>)> {
        let (b0, t0, x0) = bundle.zero_params();
        Ok((
            self.beta.clone().map_or(b0, ShapeParams),
            self.theta.clone().map_or(t0, PoseParams),
            self.tex.clone().unwrap_or(x0),
        ))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_joints: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_vertices: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub config: FitConfig,
    /// Starting point; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<FitParams>,
}

impl FitRequest {
    pub fn from_scene(scene: &Scene, config: FitConfig) -> Self {
        Self {
            target_joints: scene.target_joints.clone(),
            target_vertices: scene.target_vertices.clone(),
            config,
            init: None,
        }
    }

    pub fn run(&self, bundle: &ModelBundle) -> Result<FitResult> {
        let scene = Scene {
            target_vertices: self.target_vertices.clone(),
            target_joints: self.target_joints.clone(),
            ..Scene::default()
        };
        let problem = scene.problem(&bundle.body, &self.config)?;
        let init = self.init.clone().unwrap_or_else(|| FitParams::zeros(&bundle.body));
        fit::fit(&problem, &init, &self.config)
    }
}

/// Error report used by the service and the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_good: Option<FitResult>,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        Self {
            error: e.to_string(),
            kind: e.kind().to_string(),
            last_good: match e {
                Error::Diverged { last_good, .. } => Some((**last_good).clone()),
                _ => None,
            },
        }
    }
}
