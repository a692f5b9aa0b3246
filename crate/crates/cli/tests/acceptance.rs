//! Acceptance suite: one PASS/FAIL line per primary criterion.
//!
//! Runs without the libtest harness so the report reads top to bottom;
//! the process exits nonzero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use bipar_core::body::BodyModel;
use bipar_core::bundle::{self, SceneOptions};
use bipar_core::eye;
use bipar_core::fit::{self, FitConfig, FitParams, FitProblem};
use bipar_core::mesh::{self, Mesh};
use bipar_core::metrics;
use bipar_core::pose::{self, PoseParams};
use bipar_core::rig;
use bipar_core::rng::XorShift64Star;
use bipar_core::shape::{self, ShapeModel, ShapeParams};
use bipar_core::synth::{self, Family, FamilyConfig, FamilySample};
use bipar_core::{Mat3, Vec3};

const REST_IDENTITY_TOL: f64 = 1e-12;
const REST_IDENTITY_BUDGET: Duration = Duration::from_secs(5);
const RODRIGUES_SAMPLES: usize = 10_000;
const RODRIGUES_TOL: f64 = 1e-12;
const FK_POSES: usize = 100;
const FK_TOL: f64 = 1e-10;
const PCA_SAMPLES: usize = 200;
const PCA_RESIDUAL_TOL: f64 = 1e-9;
const PCA_RMSE_TOL: f64 = 1e-6;
const PCA_BUDGET: Duration = Duration::from_secs(30);
const LINEARITY_CASES: usize = 50;
const LINEARITY_TOL: f64 = 1e-10;
const GRADIENT_PROBLEMS: usize = 20;
const GRADIENT_REL_TOL: f64 = 1e-4;
const RECOVERY_SCENES: u64 = 10;
const RECOVERY_TOL: f64 = 1e-2;
const NOISE_SEEDS: u64 = 20;
const NOISE_SIGMA: f64 = 1e-3;
const NOISE_RMS_TOL: f64 = 5e-3;
const SCENE_BUDGET: Duration = Duration::from_secs(60);
const CIRCLE_TOL: f64 = 1e-10;
const EYE_MODELS: usize = 50;
const EYE_CONST_TOL: f64 = 1e-9;
const EYE_IDENTITY_TOL: f64 = 1e-14;
const PROCRUSTES_TOL: f64 = 1e-9;
const PROCRUSTES_PAIRS: usize = 100;

type Outcome = Result<(bool, String), String>;

struct Fixture {
    family: Family,
    samples: Vec<FamilySample>,
    shape: ShapeModel,
    pca_time: Duration,
}

impl Fixture {
    fn new() -> Self {
        let family = Family::new(&FamilyConfig {
            texture_size: 4,
            ..FamilyConfig::default()
        })
        .expect("family");
        let samples = family.samples(PCA_SAMPLES).expect("samples");
        let meshes: Vec<Mesh> = samples.iter().map(|s| s.mesh.clone()).collect();
        let t = Instant::now();
        let shape = shape::fit_pca(&meshes, family.factor_count()).expect("pca");
        let pca_time = t.elapsed();
        Self {
            family,
            samples,
            shape,
            pca_time,
        }
    }

    fn body(&self) -> BodyModel {
        BodyModel::new(self.shape.clone(), self.family.skeleton.clone(), self.family.landmarks.clone()).expect("body")
    }
}

fn max_abs(a: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_point_diff(a: &[Vec3], b: &[Vec3]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(p, q)| max_abs((p - q).iter().copied())).fold(0.0, f64::max)
}

fn random_pose(rng: &mut XorShift64Star, joints: usize, max_angle: f64) -> PoseParams {
    let mut p = PoseParams::zeros(joints);
    for k in 0..joints {
        let axis = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
        p.set_joint(k, &(axis * rng.uniform(0.0, max_angle)));
    }
    p
}

fn random_rotation(rng: &mut XorShift64Star) -> Mat3 {
    let axis = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
    pose::rodrigues(&(axis * rng.uniform(-3.1, 3.1)))
}

fn rest_identity(fx: &Fixture) -> Outcome {
    let mut rng = XorShift64Star::new(11);
    let t = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = &fx.samples[rng.below(fx.samples.len())];
        let rig_source = &fx.samples[rng.below(fx.samples.len())];
        let sk = rig::compute_rest_joints(&rig_source.mesh, &fx.family.landmarks, &fx.family.skeleton).map_err(|e| e.to_string())?;
        let posed = pose::pose_mesh(&s.mesh, &sk, &PoseParams::zeros(sk.joint_count())).map_err(|e| e.to_string())?;
        worst = worst.max(max_point_diff(&posed.vertices, &s.mesh.vertices));
    }
    let el = t.elapsed();
    Ok((
        worst <= REST_IDENTITY_TOL && el < REST_IDENTITY_BUDGET,
        format!("max displacement {worst:.1e} (tol {REST_IDENTITY_TOL:.0e}), {:.2}s (budget 5s)", el.as_secs_f64()),
    ))
}

fn rodrigues_validity() -> Outcome {
    let mut rng = XorShift64Star::new(12);
    let fixed = [0.0, 1e-15, 1e-8];
    let (mut orth, mut det) = (0.0f64, 0.0f64);
    for i in 0..RODRIGUES_SAMPLES {
        let axis = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
        let mag = match i {
            i if i < 3 * 100 => fixed[i % 3],
            i if i < 600 => 10f64.powf(rng.uniform(-16.0, -4.0)),
            _ => rng.uniform(0.0, 4.0 * std::f64::consts::PI),
        };
        let r = pose::rodrigues(&(axis * mag));
        orth = orth.max(max_abs((r.transpose() * r - Mat3::identity()).iter().copied()));
        det = det.max((r.determinant() - 1.0).abs());
    }
    Ok((
        orth <= RODRIGUES_TOL && det <= RODRIGUES_TOL,
        format!("{RODRIGUES_SAMPLES} samples: max |RtR-I| {orth:.1e}, max |det-1| {det:.1e} (tol {RODRIGUES_TOL:.0e})"),
    ))
}

fn fk_oracle(fx: &Fixture) -> Outcome {
    let sk = &fx.family.skeleton;
    let parents: Vec<_> = sk.joints.iter().map(|j| j.parent).collect();
    let template = &fx.family.template;
    let mut rng = XorShift64Star::new(13);
    let (mut wj, mut wv) = (0.0f64, 0.0f64);
    for _ in 0..FK_POSES {
        let p = random_pose(&mut rng, sk.joint_count(), std::f64::consts::PI);
        let tr = pose::forward_kinematics(sk, &p).map_err(|e| e.to_string())?;
        let joints = pose::extract_joints(&tr);
        let posed = pose::apply_lbs(template, sk, &tr).map_err(|e| e.to_string())?;
        let (nv, nj) =
            synth::naive_pose(&template.vertices, &sk.rest_joints, &parents, &sk.weights, &p).map_err(|e| e.to_string())?;
        wj = wj.max(max_point_diff(&joints, &nj));
        wv = wv.max(max_point_diff(&posed.vertices, &nv));
    }
    Ok((
        sk.joint_count() == 23 && wj <= FK_TOL && wv <= FK_TOL,
        format!("{FK_POSES} poses, {} joints: joint err {wj:.1e}, skinned vertex err {wv:.1e} (tol {FK_TOL:.0e})", sk.joint_count()),
    ))
}

fn pca_exactness(fx: &Fixture) -> Outcome {
    let mean = &fx.shape.mean.vertices;
    let (mut total, mut residual, mut worst_rmse) = (0.0, 0.0, 0.0f64);
    for s in &fx.samples {
        let beta = fx.shape.project_shape(&s.mesh).map_err(|e| e.to_string())?;
        let rec = fx.shape.eval_vertices(&beta).map_err(|e| e.to_string())?;
        let mut sq = 0.0;
        for ((x, m), r) in s.mesh.vertices.iter().zip(mean).zip(&rec) {
            total += (x - m).norm_squared();
            sq += (x - r).norm_squared();
        }
        residual += sq;
        worst_rmse = worst_rmse.max((sq / rec.len() as f64).sqrt());
    }
    let ratio = residual / total;
    let n = fx.shape.vertex_count();
    Ok((
        ratio <= PCA_RESIDUAL_TOL && worst_rmse <= PCA_RMSE_TOL && fx.pca_time < PCA_BUDGET,
        format!(
            "f={} on {} samples, N={n}: residual/total {ratio:.1e} (tol {PCA_RESIDUAL_TOL:.0e}), worst RMSE {worst_rmse:.1e} (tol {PCA_RMSE_TOL:.0e}), fit {:.2}s (budget 30s)",
            fx.shape.n_components(),
            fx.samples.len(),
            fx.pca_time.as_secs_f64()
        ),
    ))
}

fn linearity(fx: &Fixture) -> Outcome {
    let mut rng = XorShift64Star::new(14);
    let sd = fx.shape.std_devs();
    let draw = |rng: &mut XorShift64Star| ShapeParams(sd.iter().map(|s| rng.uniform(-3.0, 3.0) * s).collect());
    let mut worst = 0.0f64;
    for _ in 0..LINEARITY_CASES {
        let (a, b, t) = (draw(&mut rng), draw(&mut rng), rng.uniform(-0.5, 1.5));
        let ma = fx.shape.eval_vertices(&a).map_err(|e| e.to_string())?;
        let mb = fx.shape.eval_vertices(&b).map_err(|e| e.to_string())?;
        let mt = fx
            .shape
            .eval_vertices(&shape::interpolate_params(&a, &b, t).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let lerp: Vec<Vec3> = ma.iter().zip(&mb).map(|(x, y)| x * (1.0 - t) + y * t).collect();
        worst = worst.max(max_point_diff(&mt, &lerp));
    }
    Ok((worst <= LINEARITY_TOL, format!("{LINEARITY_CASES} cases: max err {worst:.1e} (tol {LINEARITY_TOL:.0e})")))
}

fn random_params(body: &BodyModel, rng: &mut XorShift64Star, theta_max: f64) -> FitParams {
    FitParams {
        beta: ShapeParams(body.shape.std_devs().iter().map(|s| rng.uniform(-2.0, 2.0) * s).collect()),
        theta: random_pose(rng, body.joint_count(), theta_max),
    }
}

fn flatten(p: &FitParams) -> Vec<f64> {
    p.beta.0.iter().chain(&p.theta.0).copied().collect()
}

fn unflatten(x: &[f64], nb: usize) -> FitParams {
    FitParams {
        beta: ShapeParams(x[..nb].to_vec()),
        theta: PoseParams(x[nb..].to_vec()),
    }
}

fn gradient_correctness(body: &BodyModel) -> Outcome {
    let mut rng = XorShift64Star::new(15);
    let nb = body.shape_dim();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut kinds = [0usize; 3];
    for case in 0..GRADIENT_PROBLEMS {
        let kind = case % 3;
        kinds[kind] += 1;
        let gt = random_params(body, &mut rng, 0.6);
        let mut at = random_params(body, &mut rng, 0.6);
        let posed = body.forward(&gt.beta, &gt.theta).map_err(|e| e.to_string())?;
        let mut p = FitProblem::new(body).with_joints(posed.joints.clone());
        if case % 2 == 0 {
            p = p.with_vertices(posed.vertices.clone());
        }
        if case % 4 < 2 {
            p = p.with_ground_truth(gt.clone());
        }
        p.free_shape = kind != 1;
        p.free_pose = kind != 0;
        if !p.free_shape {
            at.beta = gt.beta.clone();
        }
        if !p.free_pose {
            at.theta = gt.theta.clone();
        }
        let (gb, gth) = fit::gradient(&p, &at).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = gb.into_iter().chain(gth).collect();
        let x = flatten(&at);
        let free = |i: usize| if i < nb { p.free_shape } else { p.free_pose };
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &a) in analytic.iter().enumerate() {
            if !free(i) {
                continue;
            }
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fp = fit::objective(&p, &unflatten(&xp, nb)).map_err(|e| e.to_string())?;
            let fm = fit::objective(&p, &unflatten(&xm, nb)).map_err(|e| e.to_string())?;
            let fd = (fp - fm) / (2.0 * h);
            num += (a - fd).powi(2);
            den += fd.powi(2);
        }
        worst = worst.max(num.sqrt() / den.sqrt().max(1e-300));
    }
    Ok((
        worst <= GRADIENT_REL_TOL,
        format!(
            "{GRADIENT_PROBLEMS} problems ({} beta-only, {} theta-only, {} mixed): max rel err {worst:.1e} (tol {GRADIENT_REL_TOL:.0e})",
            kinds[0], kinds[1], kinds[2]
        ),
    ))
}

fn recovery(body: &BodyModel) -> Outcome {
    let cfg = FitConfig::default();
    let init = FitParams::zeros(body);
    let (mut pass, mut worst_b, mut worst_t, mut slowest) = (true, 0.0f64, 0.0f64, Duration::ZERO);
    for seed in 0..RECOVERY_SCENES {
        let scene = bundle::generate_scene(body, &SceneOptions { seed, ..SceneOptions::default() }).map_err(|e| e.to_string())?;
        let truth = scene.truth.clone().ok_or("scene without truth")?;
        let t = Instant::now();
        let r = fit::fit(&scene.problem(body, &cfg).map_err(|e| e.to_string())?, &init, &cfg).map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed());
        let eb = max_abs(r.beta.iter().zip(&truth.beta.0).map(|(a, b)| a - b));
        let et = max_abs(r.theta.iter().zip(&truth.theta.0).map(|(a, b)| a - b));
        let scale = max_abs(truth.beta.0.iter().copied()).max(1.0);
        pass &= eb <= RECOVERY_TOL * scale && et <= RECOVERY_TOL;
        worst_b = worst_b.max(eb / scale);
        worst_t = worst_t.max(et);
    }
    let mut worst_rms = 0.0f64;
    for seed in 0..NOISE_SEEDS {
        let scene = bundle::generate_scene(
            body,
            &SceneOptions {
                seed: 1000 + seed,
                joint_noise: NOISE_SIGMA,
                with_vertices: false,
                ..SceneOptions::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let t = Instant::now();
        let r = fit::fit(&scene.problem(body, &cfg).map_err(|e| e.to_string())?, &init, &cfg).map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed());
        let p = r.params();
        let posed = body.forward(&p.beta, &p.theta).map_err(|e| e.to_string())?;
        let clean = scene.clean_joints.as_ref().ok_or("scene without clean joints")?;
        let ms = posed
            .joints
            .iter()
            .zip(clean)
            .map(|(a, c)| (a - Vec3::from(*c)).norm_squared())
            .sum::<f64>()
            / clean.len() as f64;
        worst_rms = worst_rms.max(ms.sqrt());
    }
    pass &= worst_rms <= NOISE_RMS_TOL && slowest < SCENE_BUDGET;
    Ok((
        pass,
        format!(
            "{RECOVERY_SCENES} noiseless: max beta err {worst_b:.1e} (scaled), theta err {worst_t:.1e} rad (tol {RECOVERY_TOL:.0e}); \
             {NOISE_SEEDS} seeds at sigma={NOISE_SIGMA:.0e}, joint targets only: max joint RMS {worst_rms:.1e} (tol {NOISE_RMS_TOL:.0e}); slowest scene {:.2}s (budget 60s)",
            slowest.as_secs_f64()
        ),
    ))
}

fn eyeball_pipeline() -> Outcome {
    let mut rng = XorShift64Star::new(16);
    let mut circle_err = 0.0f64;
    let mut identity_err = 0.0f64;
    for _ in 0..200 {
        let center = Vec3::new(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let normal = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
        let radius = rng.uniform(0.01, 1.0);
        let u = normal.cross(&Vec3::new(rng.normal(), rng.normal(), rng.normal())).normalize();
        let v = normal.cross(&u);
        let n_pts = 3 + rng.below(30);
        let phase = rng.uniform(0.0, 6.3);
        let pts: Vec<Vec3> = (0..n_pts)
            .map(|i| {
                let a = phase + std::f64::consts::TAU * i as f64 / n_pts as f64;
                center + (u * a.cos() + v * a.sin()) * radius
            })
            .collect();
        let c = eye::fit_socket_circle(&pts, &normal).map_err(|e| e.to_string())?;
        circle_err = circle_err
            .max(max_abs((c.center - center).iter().copied()))
            .max((c.radius - radius).abs())
            .max(max_abs((c.normal - normal).iter().copied()));
        let e = eye::reconstruct_eyeball(&c, rng.uniform(0.5, 2.0), rng.uniform(0.0, 1.0)).map_err(|e| e.to_string())?;
        identity_err = identity_err.max(max_abs((e.eye_center + e.socket_normal * e.depth - e.socket_center).iter().copied()));
    }

    let mut const_err = 0.0f64;
    for (c1, c2) in [(1.3, 0.45), (1.05, 0.2), (1.8, 0.9)] {
        let family = Family::new(&FamilyConfig {
            eye_c1: c1,
            eye_c2: c2,
            texture_size: 4,
            ..FamilyConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let mut fits = Vec::new();
        for s in family.samples(EYE_MODELS).map_err(|e| e.to_string())? {
            for (name, truth) in &s.eyeballs {
                let idx = family.landmarks.patch(name).map_err(|e| e.to_string())?;
                let pts: Vec<Vec3> = idx.iter().map(|&i| s.mesh.vertices[i]).collect();
                let socket = eye::fit_socket_circle(&pts, &Vec3::z()).map_err(|e| e.to_string())?;
                fits.push((truth.eye_radius, truth.depth, socket.radius));
            }
        }
        let est = eye::estimate_eye_constants(&fits).map_err(|e| e.to_string())?;
        const_err = const_err.max((est.c1 - c1).abs()).max((est.c2 - c2).abs());
    }
    Ok((
        circle_err <= CIRCLE_TOL && const_err <= EYE_CONST_TOL && identity_err <= EYE_IDENTITY_TOL,
        format!(
            "circle fit err {circle_err:.1e} (tol {CIRCLE_TOL:.0e}); constants over {EYE_MODELS} models x3 err {const_err:.1e} (tol {EYE_CONST_TOL:.0e}); o_e + d_e n - o_s {identity_err:.1e} (tol {EYE_IDENTITY_TOL:.0e})"
        ),
    ))
}

fn procrustes_metric() -> Outcome {
    let mut rng = XorShift64Star::new(17);
    let (mut rigid, mut violations) = (0.0f64, 0usize);
    for _ in 0..PROCRUSTES_PAIRS {
        let n = 23;
        let gt: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.normal(), rng.normal(), rng.normal())).collect();
        let r = random_rotation(&mut rng);
        let t = Vec3::new(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0));
        let moved: Vec<Vec3> = gt.iter().map(|p| r * p + t).collect();
        rigid = rigid.max(metrics::pa_mpjpe(&moved, &gt).map_err(|e| e.to_string())?);
        let pred: Vec<Vec3> = gt
            .iter()
            .map(|p| p + Vec3::new(rng.normal(), rng.normal(), rng.normal()) * rng.uniform(0.0, 0.5))
            .collect();
        let pred: Vec<Vec3> = pred.iter().map(|p| r * p * rng.uniform(0.9, 1.1)).collect();
        let pa = metrics::pa_mpjpe(&pred, &gt).map_err(|e| e.to_string())?;
        let plain = metrics::mean_point_error(&pred, &gt).map_err(|e| e.to_string())?;
        if pa > plain + 1e-12 {
            violations += 1;
        }
    }
    Ok((
        rigid <= PROCRUSTES_TOL && violations == 0,
        format!("rigid copies PA-MPJPE {rigid:.1e} (tol {PROCRUSTES_TOL:.0e}); PA-MPJPE > MPJPE in {violations}/{PROCRUSTES_PAIRS} pairs"),
    ))
}

fn topology_gate(fx: &Fixture) -> Outcome {
    let mut bad_pairs = 0usize;
    for (i, a) in fx.samples.iter().enumerate() {
        for b in &fx.samples[i + 1..] {
            if !mesh::check_consistency(&a.mesh, &b.mesh).consistent {
                bad_pairs += 1;
            }
        }
    }
    let pairs = fx.samples.len() * (fx.samples.len() - 1) / 2;
    let base = &fx.samples[0].mesh;
    let other = &fx.samples[1].mesh;
    let mut rng = XorShift64Star::new(18);
    let mut missed = 0usize;
    let mutations = 200;
    for m in 0..mutations {
        let mut faces = other.faces.clone();
        let f = rng.below(faces.len());
        match m % 3 {
            0 => {
                let c = rng.below(3);
                let mut v = faces[f][c];
                while faces[f].contains(&v) {
                    v = rng.below(other.vertex_count()) as u32;
                }
                faces[f][c] = v;
            }
            1 => faces[f].swap(0, 1),
            _ => {
                faces.remove(f);
            }
        }
        let mutated = Mesh {
            faces,
            ..other.clone()
        };
        if mesh::check_consistency(base, &mutated).consistent {
            missed += 1;
        }
    }
    Ok((
        bad_pairs == 0 && missed == 0,
        format!("{pairs} sample pairs, {bad_pairs} inconsistent; {mutations} single-face mutations, {missed} undetected"),
    ))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bipar")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("bipar {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    run_cli(&["synth", "gen", "--out", &d("family"), "--samples", "60"])?;
    run_cli(&["model", "fit", "--data", &d("family"), "--shape-k", "5", "--tex-k", "8", "--out", &d("bundle")])?;
    let zeros = |n: usize, name: &str| std::fs::write(dir.path().join(name), serde_json::to_string(&vec![0.0; n]).unwrap());
    zeros(5, "beta.json").map_err(|e| e.to_string())?;
    zeros(69, "pose.json").map_err(|e| e.to_string())?;
    zeros(8, "tex.json").map_err(|e| e.to_string())?;
    for run in ["a", "b"] {
        run_cli(&[
            "model",
            "eval",
            "--bundle",
            &d("bundle"),
            "--beta",
            &d("beta.json"),
            "--pose",
            &d("pose.json"),
            "--tex",
            &d("tex.json"),
            "--out",
            &format!("{},{}", d(&format!("{run}.obj")), d(&format!("{run}.png"))),
        ])?;
    }
    let read = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
    let mean = read(&dir.path().join("bundle/shape/mean.obj"))?;
    let a = read(&dir.path().join("a.obj"))?;
    let b = read(&dir.path().join("b.obj"))?;
    let same_tex = read(&dir.path().join("a.png"))? == read(&dir.path().join("b.png"))?;
    Ok((
        a == mean && a == b && same_tex,
        format!(
            "zero eval vs stored mean: {}; repeated runs: mesh {}, texture {}",
            if a == mean { "byte-identical" } else { "DIFFERENT" },
            if a == b { "identical" } else { "DIFFERENT" },
            if same_tex { "identical" } else { "DIFFERENT" }
        ),
    ))
}

fn main() {
    let fx = Fixture::new();
    let body = fx.body();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("rest-pose identity", Box::new(|| rest_identity(&fx))),
        ("rodrigues validity", Box::new(rodrigues_validity)),
        ("fk oracle equivalence", Box::new(|| fk_oracle(&fx))),
        ("pca exactness", Box::new(|| pca_exactness(&fx))),
        ("shape linearity", Box::new(|| linearity(&fx))),
        ("gradient correctness", Box::new(|| gradient_correctness(&body))),
        ("parameter recovery", Box::new(|| recovery(&body))),
        ("eyeball pipeline", Box::new(eyeball_pipeline)),
        ("procrustes metric", Box::new(procrustes_metric)),
        ("topology gate", Box::new(|| topology_gate(&fx))),
        ("cli determinism", Box::new(cli_determinism)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {name:<24} {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
