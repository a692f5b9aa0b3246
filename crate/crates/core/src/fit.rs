//! Recovery of shape and pose parameters from geometric targets.
//!
//! The reported loss is `L = L_para + lambda_s L_shape + lambda_p L_pose`
//! with an L1 parameter term and Euclidean vertex and joint terms. The
//! optimizer minimizes a smooth surrogate: the L1 term is Huber-smoothed
//! (`delta = 1e-4`) and the vertex and joint terms are halved squares.
//! Derivatives are exact for the current landmark extreme-vertex selection
//! (bounding-box centers are piecewise linear in the vertices).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, PosedBody};
use crate::pose::{self, PoseParams};
use crate::shape::ShapeParams;
use crate::{Error, Mat3, Result, Vec3};

pub const HUBER_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub beta: ShapeParams,
    pub theta: PoseParams,
}

impl FitParams {
    pub fn zeros(model: &BodyModel) -> Self {
        Self {
            beta: ShapeParams::zeros(model.shape_dim()),
            theta: PoseParams::zeros(model.joint_count()),
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        self.beta.0.iter().chain(&self.theta.0).copied().collect()
    }

    fn from_slice(x: &[f64], shape_dim: usize) -> Self {
        Self {
            beta: ShapeParams(x[..shape_dim].to_vec()),
            theta: PoseParams(x[shape_dim..].to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Damped Gauss-Newton on the squared terms, Huber curvature for L1.
    #[default]
    LevenbergMarquardt,
    /// Gradient descent with backtracking line search.
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_init: f64,
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub seed: u64,
    pub method: FitMethod,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-9,
            step_init: 1.0,
            lambda_s: 1.0,
            lambda_p: 1.0,
            seed: 0,
            method: FitMethod::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitProblem<'a> {
    pub model: &'a BodyModel,
    pub target_vertices: Option<Vec<Vec3>>,
    pub target_joints: Option<Vec<Vec3>>,
    pub ground_truth: Option<FitParams>,
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub free_shape: bool,
    pub free_pose: bool,
}

impl<'a> FitProblem<'a> {
    pub fn new(model: &'a BodyModel) -> Self {
        Self {
            model,
            target_vertices: None,
            target_joints: None,
            ground_truth: None,
            lambda_s: 1.0,
            lambda_p: 1.0,
            free_shape: true,
            free_pose: true,
        }
    }

    pub fn with_vertices(mut self, v: Vec<Vec3>) -> Self {
        self.target_vertices = Some(v);
        self
    }

    pub fn with_joints(mut self, j: Vec<Vec3>) -> Self {
        self.target_joints = Some(j);
        self
    }

    pub fn with_ground_truth(mut self, gt: FitParams) -> Self {
        self.ground_truth = Some(gt);
        self
    }

    pub fn with_weights(mut self, lambda_s: f64, lambda_p: f64) -> Self {
        self.lambda_s = lambda_s;
        self.lambda_p = lambda_p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_vertices.is_none() && self.target_joints.is_none() && self.ground_truth.is_none() {
            return Err(Error::Invalid("fit problem has no target".into()));
        }
        if !(self.lambda_s >= 0.0 && self.lambda_p >= 0.0) {
            return Err(Error::Invalid("loss weights must be non-negative".into()));
        }
        if !(self.free_shape || self.free_pose) {
            return Err(Error::Invalid("fit problem has no free parameters".into()));
        }
        if let Some(v) = &self.target_vertices {
            crate::error::check_len("target vertices", self.model.vertex_count(), v.len())?;
        }
        if let Some(j) = &self.target_joints {
            crate::error::check_len("target joints", self.model.joint_count(), j.len())?;
        }
        if let Some(gt) = &self.ground_truth {
            self.check_params(gt)?;
        }
        Ok(())
    }

    fn check_params(&self, p: &FitParams) -> Result<()> {
        crate::error::check_len("shape parameters", self.model.shape_dim(), p.beta.len())?;
        crate::error::check_len("pose parameters", self.model.pose_dim(), p.theta.0.len())
    }

    fn shape_dim(&self) -> usize {
        self.model.shape_dim()
    }

    /// Indices (into the full parameter vector) that are optimized.
    fn free_indices(&self) -> Vec<usize> {
        let nb = self.shape_dim();
        let np = self.model.pose_dim();
        let mut out = Vec::with_capacity(nb + np);
        if self.free_shape {
            out.extend(0..nb);
        }
        if self.free_pose {
            out.extend(nb..nb + np);
        }
        out
    }

    fn residuals(&self, posed: &PosedBody) -> Vec<f64> {
        let mut r = Vec::new();
        if let Some(tv) = &self.target_vertices {
            let s = self.lambda_s.sqrt();
            for (u, t) in posed.vertices.iter().zip(tv) {
                r.extend((u - t).iter().map(|d| s * d));
            }
        }
        if let Some(tj) = &self.target_joints {
            let s = self.lambda_p.sqrt();
            for (g, t) in posed.joints.iter().zip(tj) {
                r.extend((g - t).iter().map(|d| s * d));
            }
        }
        r
    }
}

/// Loss terms at one parameter point. `objective` is the smoothed value
/// that the optimizer decreases; the others are the reported values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub para: f64,
    pub shape: f64,
    pub pose: f64,
    pub total: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub loss: LossTerms,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

impl FitResult {
    pub fn params(&self) -> FitParams {
        FitParams {
            beta: ShapeParams(self.beta.clone()),
            theta: PoseParams(self.theta.clone()),
        }
    }
}

fn huber(d: f64) -> f64 {
    let a = d.abs();
    if a <= HUBER_DELTA {
        0.5 * d * d / HUBER_DELTA
    } else {
        a - 0.5 * HUBER_DELTA
    }
}

fn huber_grad(d: f64) -> f64 {
    if d.abs() <= HUBER_DELTA {
        d / HUBER_DELTA
    } else {
        d.signum()
    }
}

fn huber_curvature(d: f64) -> f64 {
    if d.abs() <= HUBER_DELTA {
        1.0 / HUBER_DELTA
    } else {
        0.0
    }
}

/// Sum of absolute differences over both parameter vectors.
pub fn loss_para(pred: &FitParams, gt: &FitParams) -> Result<f64> {
    crate::error::check_len("shape parameters", gt.beta.len(), pred.beta.len())?;
    crate::error::check_len("pose parameters", gt.theta.0.len(), pred.theta.0.len())?;
    Ok(pred
        .to_vec()
        .iter()
        .zip(gt.to_vec())
        .map(|(p, g)| (p - g).abs())
        .sum())
}

fn point_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Vertex distance between shapes posed with the ground-truth pose.
pub fn loss_shape(model: &BodyModel, beta_pred: &ShapeParams, beta_gt: &ShapeParams, theta_gt: &PoseParams) -> Result<f64> {
    let a = model.forward(beta_pred, theta_gt)?;
    let b = model.forward(beta_gt, theta_gt)?;
    Ok(point_distance(&a.vertices, &b.vertices))
}

/// Posed-joint distance between poses applied to the ground-truth shape.
pub fn loss_pose(model: &BodyModel, theta_pred: &PoseParams, theta_gt: &PoseParams, beta_gt: &ShapeParams) -> Result<f64> {
    let a = model.forward(beta_gt, theta_pred)?;
    let b = model.forward(beta_gt, theta_gt)?;
    Ok(point_distance(&a.joints, &b.joints))
}

/// Reported and smoothed losses at `at`.
pub fn evaluate(problem: &FitProblem, at: &FitParams) -> Result<LossTerms> {
    problem.check_params(at)?;
    let posed = problem.model.forward(&at.beta, &at.theta)?;
    Ok(loss_terms(problem, at, &posed))
}

fn loss_terms(problem: &FitProblem, at: &FitParams, posed: &PosedBody) -> LossTerms {
    let mut t = LossTerms {
        para: 0.0,
        shape: 0.0,
        pose: 0.0,
        total: 0.0,
        objective: 0.0,
    };
    if let Some(gt) = &problem.ground_truth {
        let x = at.to_vec();
        for (i, g) in gt.to_vec().iter().enumerate() {
            let d = x[i] - g;
            t.para += d.abs();
            t.objective += huber(d);
        }
    }
    if let Some(tv) = &problem.target_vertices {
        t.shape = point_distance(&posed.vertices, tv);
        t.objective += 0.5 * problem.lambda_s * t.shape * t.shape;
    }
    if let Some(tj) = &problem.target_joints {
        t.pose = point_distance(&posed.joints, tj);
        t.objective += 0.5 * problem.lambda_p * t.pose * t.pose;
    }
    t.total = t.para + problem.lambda_s * t.shape + problem.lambda_p * t.pose;
    t
}

/// Derivatives of posed vertices and joints with respect to every
/// parameter, column-major over the full `(beta, theta)` vector.
pub struct Jacobian {
    /// `d posed_vertices / d param`, one `N`-vector of 3D points per column.
    pub vertices: Vec<Vec<Vec3>>,
    /// `d posed_joints / d param`.
    pub joints: Vec<Vec<Vec3>>,
}

/// Forward-mode derivatives through shape evaluation, joint localization,
/// forward kinematics and skinning.
pub fn jacobian(model: &BodyModel, at: &FitParams, posed: &PosedBody, columns: &[usize]) -> Jacobian {
    let sk = &model.skeleton;
    let kc = sk.joint_count();
    let nb = model.shape_dim();
    let n = model.vertex_count();
    let rot = &posed.transforms.rotations;
    let rest_j = &posed.rest_joints;
    let local: Vec<Mat3> = (0..kc).map(|k| pose::rodrigues(&at.theta.joint(k))).collect();
    let offset = |k: usize| match sk.parent(k) {
        Some(p) => rest_j[k] - rest_j[p],
        None => rest_j[k],
    };

    let mut jv = Vec::with_capacity(columns.len());
    let mut jj = Vec::with_capacity(columns.len());
    for &c in columns {
        let mut d_rot = vec![Mat3::zeros(); kc];
        let mut d_pos = vec![Vec3::zeros(); kc];
        let mut d_rest_j = vec![Vec3::zeros(); kc];
        let mut active = vec![false; kc];
        let d_rest_v: Option<&[f64]>;
        if c < nb {
            let comp = model.shape.component(c);
            d_rest_v = Some(comp);
            d_rest_j = posed.regressor.apply_flat(comp);
            for k in 0..kc {
                let dt = match sk.parent(k) {
                    Some(p) => d_rest_j[k] - d_rest_j[p],
                    None => d_rest_j[k],
                };
                d_pos[k] = match sk.parent(k) {
                    Some(p) => rot[p] * dt + d_pos[p],
                    None => dt,
                };
            }
            active.iter_mut().for_each(|a| *a = true);
        } else {
            d_rest_v = None;
            let j = (c - nb) / 3;
            let axis = (c - nb) % 3;
            let d_local = pose::rodrigues_derivatives(&at.theta.joint(j))[axis];
            d_rot[j] = match sk.parent(j) {
                Some(p) => rot[p] * d_local,
                None => d_local,
            };
            active[j] = true;
            for k in j + 1..kc {
                if let Some(p) = sk.parent(k) {
                    if active[p] {
                        active[k] = true;
                        d_rot[k] = d_rot[p] * local[k];
                        d_pos[k] = d_rot[p] * offset(k) + d_pos[p];
                    }
                }
            }
        }

        let mut dv = vec![Vec3::zeros(); n];
        for (i, out) in dv.iter_mut().enumerate() {
            let v = posed.rest_vertices[i];
            let dvi = d_rest_v.map_or(Vec3::zeros(), |f| Vec3::new(f[3 * i], f[3 * i + 1], f[3 * i + 2]));
            let mut acc = Vec3::zeros();
            for (k, w) in sk.weights.nonzeros(i) {
                if !active[k] {
                    continue;
                }
                // u = A_k (v - J_k) + g_k
                acc += (d_rot[k] * (v - rest_j[k]) + rot[k] * (dvi - d_rest_j[k]) + d_pos[k]) * w;
            }
            *out = acc;
        }
        jv.push(dv);
        jj.push(d_pos);
    }
    Jacobian {
        vertices: jv,
        joints: jj,
    }
}

struct Linearization {
    terms: LossTerms,
    /// Gradient over the free parameters.
    grad: DVector<f64>,
    /// Gauss-Newton Hessian over the free parameters.
    hessian: DMatrix<f64>,
}

fn linearize(problem: &FitProblem, x: &[f64], free: &[usize]) -> Result<Linearization> {
    let at = FitParams::from_slice(x, problem.shape_dim());
    let posed = problem.model.forward(&at.beta, &at.theta)?;
    let terms = loss_terms(problem, &at, &posed);
    let jac = jacobian(problem.model, &at, &posed, free);
    let r = problem.residuals(&posed);
    let m = r.len();
    let nf = free.len();
    let mut jm = DMatrix::<f64>::zeros(m, nf);
    for (col, (dv, dj)) in jac.vertices.iter().zip(&jac.joints).enumerate() {
        let mut row = 0;
        if problem.target_vertices.is_some() {
            let s = problem.lambda_s.sqrt();
            for d in dv {
                for a in 0..3 {
                    jm[(row, col)] = s * d[a];
                    row += 1;
                }
            }
        }
        if problem.target_joints.is_some() {
            let s = problem.lambda_p.sqrt();
            for d in dj {
                for a in 0..3 {
                    jm[(row, col)] = s * d[a];
                    row += 1;
                }
            }
        }
    }
    let rv = DVector::from_vec(r);
    let mut grad = jm.tr_mul(&rv);
    let mut hessian = jm.tr_mul(&jm);
    if let Some(gt) = &problem.ground_truth {
        let g = gt.to_vec();
        for (col, &idx) in free.iter().enumerate() {
            let d = x[idx] - g[idx];
            grad[col] += huber_grad(d);
            hessian[(col, col)] += huber_curvature(d);
        }
    }
    Ok(Linearization { terms, grad, hessian })
}

/// Analytic gradient of the smoothed objective over the full parameter
/// vector, split into `(d/d beta, d/d theta)`. Fixed parameters get zero.
pub fn gradient(problem: &FitProblem, at: &FitParams) -> Result<(Vec<f64>, Vec<f64>)> {
    problem.validate()?;
    problem.check_params(at)?;
    let free = problem.free_indices();
    let lin = linearize(problem, &at.to_vec(), &free)?;
    let nb = problem.shape_dim();
    let mut full = vec![0.0; nb + problem.model.pose_dim()];
    for (col, &idx) in free.iter().enumerate() {
        full[idx] = lin.grad[col];
    }
    let theta = full.split_off(nb);
    Ok((full, theta))
}

/// Smoothed objective value, the quantity checked against finite
/// differences of [`gradient`].
pub fn objective(problem: &FitProblem, at: &FitParams) -> Result<f64> {
    Ok(evaluate(problem, at)?.objective)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn fit(problem: &FitProblem, init: &FitParams, config: &FitConfig) -> Result<FitResult> {
    problem.validate()?;
    problem.check_params(init)?;
    let free = problem.free_indices();
    let mut x = init.to_vec();
    let nb = problem.shape_dim();

    let result = |x: &[f64], terms: LossTerms, iterations: usize, converged: bool, grad_norm: f64| FitResult {
        beta: x[..nb].to_vec(),
        theta: x[nb..].to_vec(),
        loss: terms,
        iterations,
        converged,
        grad_norm,
    };

    let mut lin = linearize(problem, &x, &free)?;
    if !lin.terms.objective.is_finite() || lin.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            iteration: 0,
            last_good: Box::new(result(&x, lin.terms, 0, false, f64::NAN)),
        });
    }
    let mut damping = 1e-3;
    let mut step = config.step_init;
    let mut iterations = 0;
    loop {
        let gnorm = inf_norm(&lin.grad);
        if gnorm <= config.grad_tol {
            return Ok(result(&x, lin.terms, iterations, true, gnorm));
        }
        if iterations >= config.max_iters {
            return Ok(result(&x, lin.terms, iterations, false, gnorm));
        }
        let accepted = match config.method {
            FitMethod::LevenbergMarquardt => lm_step(problem, &x, &free, &lin, &mut damping)?,
            FitMethod::GradientDescent => gd_step(problem, &x, &free, &lin, &mut step)?,
        };
        iterations += 1;
        let Some(next) = accepted else {
            // no decrease available at machine precision
            return Ok(result(&x, lin.terms, iterations, false, gnorm));
        };
        let next = if problem.ground_truth.is_none() {
            wrap_rotations(next, nb)
        } else {
            next
        };
        let next_lin = linearize(problem, &next, &free)?;
        if !next_lin.terms.objective.is_finite() || next_lin.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: iterations,
                last_good: Box::new(result(&x, lin.terms, iterations, false, gnorm)),
            });
        }
        x = next;
        lin = next_lin;
    }
}

/// Maps every joint's axis-angle to the equivalent one with norm at most pi.
fn wrap_rotations(mut x: Vec<f64>, shape_dim: usize) -> Vec<f64> {
    for r in x[shape_dim..].chunks_exact_mut(3) {
        let v = Vec3::new(r[0], r[1], r[2]);
        let phi = v.norm();
        if phi > PI {
            let turns = (phi / (2.0 * PI)).round();
            let w = v * ((phi - 2.0 * PI * turns) / phi);
            r.copy_from_slice(w.as_slice());
        }
    }
    x
}

fn trial_objective(problem: &FitProblem, x: &[f64]) -> f64 {
    let at = FitParams::from_slice(x, problem.shape_dim());
    match evaluate(problem, &at) {
        Ok(t) => t.objective,
        Err(_) => f64::NAN,
    }
}

fn apply_step(x: &[f64], free: &[usize], delta: &DVector<f64>) -> Vec<f64> {
    let mut out = x.to_vec();
    for (col, &idx) in free.iter().enumerate() {
        out[idx] += delta[col];
    }
    out
}

fn lm_step(
    problem: &FitProblem,
    x: &[f64],
    free: &[usize],
    lin: &Linearization,
    damping: &mut f64,
) -> Result<Option<Vec<f64>>> {
    let current = lin.terms.objective;
    let nf = free.len();
    for _ in 0..60 {
        let mut a = lin.hessian.clone();
        for i in 0..nf {
            a[(i, i)] += *damping * lin.hessian[(i, i)].max(1e-9);
        }
        let Some(ch) = a.cholesky() else {
            *damping *= 4.0;
            continue;
        };
        let delta = ch.solve(&(-&lin.grad));
        let next = apply_step(x, free, &delta);
        if next == x {
            return Ok(None);
        }
        let value = trial_objective(problem, &next);
        if value.is_finite() && value <= current {
            *damping = (*damping / 3.0).max(1e-12);
            return Ok(Some(next));
        }
        *damping *= 4.0;
        if *damping > 1e16 {
            break;
        }
    }
    Ok(None)
}

fn gd_step(
    problem: &FitProblem,
    x: &[f64],
    free: &[usize],
    lin: &Linearization,
    step: &mut f64,
) -> Result<Option<Vec<f64>>> {
    let current = lin.terms.objective;
    let g2 = lin.grad.norm_squared();
    for _ in 0..80 {
        let delta = -&lin.grad * *step;
        let next = apply_step(x, free, &delta);
        if next == x {
            return Ok(None);
        }
        let value = trial_objective(problem, &next);
        if value.is_finite() && value <= current - 1e-4 * *step * g2 {
            *step *= 2.0;
            return Ok(Some(next));
        }
        *step *= 0.5;
    }
    Ok(None)
}
