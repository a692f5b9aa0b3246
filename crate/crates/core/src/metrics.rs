//! Reconstruction errors: MPVE, MPJPE and Procrustes-aligned MPJPE.

use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    pub mpve: f64,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
}

pub fn mean_point_error(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    crate::error::check_len("points", gt.len(), pred.len())?;
    if gt.is_empty() {
        return Err(Error::Invalid("no points to compare".into()));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).sum::<f64>() / gt.len() as f64)
}

/// Similarity transform `x -> s R x + t` minimizing squared error to a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }
}

/// Closed-form similarity alignment of `source` onto `target` (Umeyama):
/// rotation from the SVD of the cross-covariance with a reflection guard.
pub fn procrustes(source: &[Vec3], target: &[Vec3]) -> Result<Similarity> {
    crate::error::check_len("points", target.len(), source.len())?;
    if source.is_empty() {
        return Err(Error::Invalid("no points to align".into()));
    }
    let n = source.len() as f64;
    let mu_s = source.iter().sum::<Vec3>() / n;
    let mu_t = target.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let (ds, dt) = (s - mu_s, t - mu_t);
        cov += dt * ds.transpose();
        var_s += ds.norm_squared();
    }
    if var_s == 0.0 {
        return Ok(Similarity {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: mu_t - mu_s,
        });
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
    let scale = trace / var_s;
    Ok(Similarity {
        scale,
        rotation,
        translation: mu_t - rotation * mu_s * scale,
    })
}

pub fn pa_mpjpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    let sim = procrustes(pred, gt)?;
    let aligned: Vec<Vec3> = pred.iter().map(|p| sim.apply(p)).collect();
    mean_point_error(&aligned, gt)
}

pub fn eval_metrics(
    pred_vertices: &[Vec3],
    gt_vertices: &[Vec3],
    pred_joints: &[Vec3],
    gt_joints: &[Vec3],
) -> Result<ReconstructionMetrics> {
    Ok(ReconstructionMetrics {
        mpve: mean_point_error(pred_vertices, gt_vertices)?,
        mpjpe: mean_point_error(pred_joints, gt_joints)?,
        pa_mpjpe: pa_mpjpe(pred_joints, gt_joints)?,
    })
}
