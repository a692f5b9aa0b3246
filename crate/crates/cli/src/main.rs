use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use bipar_client::{Client, ClientError};
use bipar_core::api::{ErrorBody, EvalRequest, FitRequest};
use bipar_core::bundle::{self, ModelBundle, Scene, SceneOptions};
use bipar_core::eye::{self, EyeballFit};
use bipar_core::fit::{FitConfig, FitMethod, FitResult};
use bipar_core::mesh::{self, Mesh};
use bipar_core::metrics::{self, ReconstructionMetrics};
use bipar_core::pose::{self, PoseParams, PoseSequence, RetargetMap};
use bipar_core::rig::{LandmarkSet, DEFAULT_JOINTS};
use bipar_core::shape::DEFAULT_SHAPE_COMPONENTS;
use bipar_core::synth::{self, Family, FamilyConfig};
use bipar_core::texture::TextureImage;
use bipar_core::Vec3;
use bipar_service::{AppState, DEFAULT_FIT_WORKERS};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Parametric biped character model: generation, fitting, evaluation and serving.
#[derive(Parser)]
#[command(name = "bipar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic character families and fitting scenes.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Fit and evaluate model bundles.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Recover parameters from geometric targets.
    #[command(subcommand)]
    Fit(FitCmd),
    /// Pose utilities.
    #[command(subcommand)]
    Pose(PoseCmd),
    /// Eyeball reconstruction.
    #[command(subcommand)]
    Eye(EyeCmd),
    /// Serve a bundle over HTTP.
    Serve(ServeArgs),
    /// Talk to a running service.
    #[command(subcommand)]
    Remote(RemoteCmd),
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Generate a family directory (family.json, template, samples, textures).
    Gen {
        #[arg(long, env = "BIPAR_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "BIPAR_OUT")]
        out: PathBuf,
        /// Overrides the configured sample count.
        #[arg(long, env = "BIPAR_SAMPLES")]
        samples: Option<usize>,
        /// Overrides the configured seed.
        #[arg(long, env = "BIPAR_SEED")]
        seed: Option<u64>,
    },
    /// Generate a posed fitting target with known parameters.
    Scene {
        #[arg(long, env = "BIPAR_BUNDLE")]
        bundle: PathBuf,
        #[arg(long, env = "BIPAR_OUT")]
        out: PathBuf,
        #[arg(long, env = "BIPAR_SEED", default_value_t = 0)]
        seed: u64,
        /// Gaussian noise added to target joints.
        #[arg(long, env = "BIPAR_NOISE", default_value_t = 0.0)]
        noise: f64,
        #[arg(long, env = "BIPAR_BETA_SIGMAS", default_value_t = 2.0)]
        beta_sigmas: f64,
        #[arg(long, env = "BIPAR_MAX_ANGLE", default_value_t = 0.6)]
        max_angle: f64,
        /// Omit vertex targets.
        #[arg(long)]
        joints_only: bool,
    },
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Fit shape and texture spaces to a family directory.
    Fit {
        #[arg(long, env = "BIPAR_DATA")]
        data: PathBuf,
        #[arg(long, env = "BIPAR_SHAPE_K", default_value_t = DEFAULT_SHAPE_COMPONENTS)]
        shape_k: usize,
        #[arg(long, env = "BIPAR_TEX_K", default_value_t = 64)]
        tex_k: usize,
        #[arg(long, env = "BIPAR_OUT")]
        out: PathBuf,
    },
    /// Evaluate shape, pose and texture parameters to a mesh and texture.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ParamFiles {
    /// JSON array, or object with a `beta` field; zeros when omitted.
    #[arg(long, env = "BIPAR_BETA")]
    beta: Option<PathBuf>,
    /// JSON array of 69 values, or object with a `theta` field.
    #[arg(long, env = "BIPAR_POSE")]
    pose: Option<PathBuf>,
    /// JSON array, or object with a `tex` field.
    #[arg(long, env = "BIPAR_TEX")]
    tex: Option<PathBuf>,
    /// `mesh.obj` or `mesh.obj,texture.png`.
    #[arg(long, env = "BIPAR_OUT")]
    out: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, env = "BIPAR_BUNDLE")]
    bundle: PathBuf,
    #[command(flatten)]
    params: ParamFiles,
    /// Also write reconstructed eyeballs as JSON.
    #[arg(long, env = "BIPAR_EYES")]
    eyes: Option<PathBuf>,
}

#[derive(Args)]
struct FitOptions {
    /// Fit configuration JSON; fields not given keep their defaults.
    #[arg(long, env = "BIPAR_FIT_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "BIPAR_MAX_ITERS")]
    max_iters: Option<usize>,
    #[arg(long, env = "BIPAR_METHOD", value_parser = parse_method)]
    method: Option<FitMethod>,
}

#[derive(Subcommand)]
enum FitCmd {
    /// Fit parameters to a scene's vertex and joint targets.
    Recover {
        #[arg(long, env = "BIPAR_BUNDLE")]
        bundle: PathBuf,
        #[arg(long, env = "BIPAR_TARGET")]
        target: PathBuf,
        #[arg(long, env = "BIPAR_OUT")]
        out: PathBuf,
        #[command(flatten)]
        options: FitOptions,
    },
}

#[derive(Subcommand)]
enum PoseCmd {
    /// Map a pose sequence onto another skeleton's joints.
    Retarget {
        #[arg(long, env = "BIPAR_MAP")]
        map: PathBuf,
        #[arg(long = "in", env = "BIPAR_IN")]
        input: PathBuf,
        #[arg(long, env = "BIPAR_OUT")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EyeCmd {
    /// Fit socket circles and reconstruct eyeballs on a mesh.
    Fit {
        #[arg(long, env = "BIPAR_MESH")]
        mesh: PathBuf,
        #[arg(long, env = "BIPAR_LANDMARKS")]
        landmarks: PathBuf,
        #[arg(long, env = "BIPAR_C1")]
        c1: f64,
        #[arg(long, env = "BIPAR_C2")]
        c2: f64,
        #[arg(long, env = "BIPAR_OUT")]
        out: PathBuf,
        /// Patches whose names start with this prefix are eye sockets.
        #[arg(long, env = "BIPAR_SOCKET_PREFIX", default_value = "eye_socket")]
        socket_prefix: String,
        /// Direction the socket normals should face, as `x,y,z`.
        #[arg(long, env = "BIPAR_OUTWARD", default_value = "0,0,1", value_parser = parse_vec3)]
        outward: Vec3,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "BIPAR_BUNDLE")]
    bundle: PathBuf,
    #[arg(long, env = "BIPAR_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "BIPAR_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "BIPAR_FIT_WORKERS", default_value_t = DEFAULT_FIT_WORKERS)]
    fit_workers: usize,
}

#[derive(Subcommand)]
enum RemoteCmd {
    /// Print service metadata.
    Meta {
        #[arg(long, env = "BIPAR_URL")]
        url: String,
    },
    /// Evaluate through the service.
    Eval {
        #[arg(long, env = "BIPAR_URL")]
        url: String,
        #[command(flatten)]
        params: ParamFiles,
        /// Use the binary transport.
        #[arg(long)]
        binary: bool,
    },
    /// Fit a scene through the service.
    Fit {
        #[arg(long, env = "BIPAR_URL")]
        url: String,
        #[arg(long, env = "BIPAR_TARGET")]
        target: PathBuf,
        #[arg(long, env = "BIPAR_OUT")]
        out: PathBuf,
        #[command(flatten)]
        options: FitOptions,
    },
}

fn parse_method(s: &str) -> std::result::Result<FitMethod, String> {
    match s {
        "lm" | "levenberg_marquardt" => Ok(FitMethod::LevenbergMarquardt),
        "gd" | "gradient_descent" => Ok(FitMethod::GradientDescent),
        _ => Err(format!("unknown method {s:?} (use lm or gd)")),
    }
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got {s:?}")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Vector {
    Plain(Vec<f64>),
    Beta { beta: Vec<f64> },
    Theta { theta: Vec<f64> },
    Tex { tex: Vec<f64> },
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    Ok(match read_json(path)? {
        Vector::Plain(v) | Vector::Beta { beta: v } | Vector::Theta { theta: v } | Vector::Tex { tex: v } => v,
    })
}

impl ParamFiles {
    fn request(&self) -> Result<EvalRequest> {
        let opt = |p: &Option<PathBuf>| p.as_deref().map(read_vector).transpose();
        Ok(EvalRequest {
            beta: opt(&self.beta)?,
            theta: opt(&self.pose)?,
            tex: opt(&self.tex)?,
        })
    }

    fn outputs(&self) -> Result<(PathBuf, Option<PathBuf>)> {
        let parts: Vec<&str> = self.out.split(',').map(str::trim).collect();
        match parts[..] {
            [m] if !m.is_empty() => Ok((m.into(), None)),
            [m, t] if !m.is_empty() && !t.is_empty() => Ok((m.into(), Some(t.into()))),
            _ => bail!("--out must be `mesh.obj` or `mesh.obj,texture.png`, got {:?}", self.out),
        }
    }
}

impl FitOptions {
    fn resolve(&self, scene: &Scene) -> Result<FitConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_json(p)?,
            None => scene.config.clone().unwrap_or_default(),
        };
        if let Some(n) = self.max_iters {
            cfg.max_iters = n;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct ParamError {
    beta_max_abs: f64,
    theta_max_abs: f64,
}

#[derive(Serialize)]
struct RecoveryReport {
    #[serde(flatten)]
    result: FitResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    param_error: Option<ParamError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<ReconstructionMetrics>,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn report(bundle: Option<&ModelBundle>, scene: &Scene, result: FitResult) -> Result<RecoveryReport> {
    let Some(truth) = &scene.truth else {
        return Ok(RecoveryReport {
            result,
            param_error: None,
            metrics: None,
        });
    };
    let param_error = Some(ParamError {
        beta_max_abs: max_abs_diff(&result.beta, &truth.beta.0),
        theta_max_abs: max_abs_diff(&result.theta, &truth.theta.0),
    });
    let metrics = match bundle {
        Some(b) => {
            let p = result.params();
            let pred = b.body.forward(&p.beta, &p.theta)?;
            let gt = b.body.forward(&truth.beta, &truth.theta)?;
            Some(metrics::eval_metrics(&pred.vertices, &gt.vertices, &pred.joints, &gt.joints)?)
        }
        None => None,
    };
    Ok(RecoveryReport {
        result,
        param_error,
        metrics,
    })
}

fn write_eval_outputs(mesh: &Mesh, texture: Option<&TextureImage>, params: &ParamFiles) -> Result<()> {
    let (mesh_path, tex_path) = params.outputs()?;
    mesh::save_mesh(mesh, &mesh_path)?;
    if let (Some(p), Some(t)) = (tex_path, texture) {
        t.save_png(p)?;
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(SynthCmd::Gen {
            config,
            out,
            samples,
            seed,
        }) => {
            let mut cfg: FamilyConfig = match config {
                Some(p) => read_json(&p)?,
                None => FamilyConfig::default(),
            };
            if let Some(n) = samples {
                cfg.samples = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let family = Family::new(&cfg)?;
            let samples = family.samples(cfg.samples)?;
            let manifest = synth::write_family(&out, &family, &samples)?;
            println!(
                "{}",
                serde_json::json!({
                    "out": out,
                    "samples": samples.len(),
                    "vertex_count": manifest.topology.vertex_count,
                    "face_count": manifest.topology.face_count,
                })
            );
        }
        Command::Synth(SynthCmd::Scene {
            bundle,
            out,
            seed,
            noise,
            beta_sigmas,
            max_angle,
            joints_only,
        }) => {
            let b = ModelBundle::load(&bundle)?;
            let scene = bundle::generate_scene(
                &b.body,
                &SceneOptions {
                    seed,
                    beta_sigmas,
                    max_angle,
                    joint_noise: noise,
                    with_vertices: !joints_only,
                    with_joints: true,
                },
            )?;
            scene.save(&out)?;
        }
        Command::Model(ModelCmd::Fit {
            data,
            shape_k,
            tex_k,
            out,
        }) => {
            let b = bundle::fit_from_family(&data, shape_k, tex_k)?;
            b.save(&out)?;
            println!("{}", serde_json::to_string(&b.manifest)?);
        }
        Command::Model(ModelCmd::Eval(args)) => {
            let b = ModelBundle::load(&args.bundle)?;
            let (beta, theta, tex) = args.params.request()?.resolve(&b)?;
            let e = b.eval(&beta, &theta, &tex)?;
            write_eval_outputs(&e.mesh, Some(&e.texture), &args.params)?;
            if let Some(p) = args.eyes {
                let eyes: BTreeMap<String, EyeballFit> = e.eyeballs.into_iter().collect();
                write_json(&p, &eyes)?;
            }
        }
        Command::Fit(FitCmd::Recover {
            bundle,
            target,
            out,
            options,
        }) => {
            let b = ModelBundle::load(&bundle)?;
            let scene = Scene::load(&target)?;
            let cfg = options.resolve(&scene)?;
            let result = FitRequest::from_scene(&scene, cfg).run(&b)?;
            write_json(&out, &report(Some(&b), &scene, result)?)?;
        }
        Command::Pose(PoseCmd::Retarget { map, input, out }) => {
            let map: RetargetMap = read_json(&map)?;
            let seq = PoseSequence::load(&input)?;
            let default: Vec<String> = DEFAULT_JOINTS.iter().map(|(n, _)| n.to_string()).collect();
            let src = map.src_joints.clone().unwrap_or_else(|| default.clone());
            let dst = map.dst_joints.clone().unwrap_or(default);
            let frames = seq
                .frames
                .iter()
                .map(|f| pose::retarget_pose(&PoseParams(f.clone()), &src, &dst, &map).map(|p| p.0))
                .collect::<bipar_core::Result<Vec<_>>>()?;
            PoseSequence { fps: seq.fps, frames }.save(&out)?;
        }
        Command::Eye(EyeCmd::Fit {
            mesh,
            landmarks,
            c1,
            c2,
            out,
            socket_prefix,
            outward,
        }) => {
            let m = mesh::load_mesh(&mesh)?.mesh;
            let lm = LandmarkSet::load(&landmarks)?;
            lm.validate(m.vertex_count())?;
            let mut eyes = BTreeMap::new();
            for (name, idx) in lm.patches.iter().filter(|(n, _)| n.starts_with(&socket_prefix)) {
                let pts: Vec<Vec3> = idx.iter().map(|&i| m.vertices[i]).collect();
                let socket = eye::fit_socket_circle(&pts, &outward)?;
                eyes.insert(name.clone(), eye::reconstruct_eyeball(&socket, c1, c2)?);
            }
            if eyes.is_empty() {
                bail!(bipar_core::Error::UnknownName(format!("no landmark patch starts with {socket_prefix:?}")));
            }
            write_json(&out, &eyes)?;
        }
        Command::Serve(args) => {
            let b = Arc::new(ModelBundle::load(&args.bundle)?);
            runtime()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
                    .await
                    .with_context(|| format!("binding {}:{}", args.host, args.port))?;
                let addr = listener.local_addr()?;
                println!("{}", serde_json::json!({ "listening": format!("http://{addr}") }));
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                bipar_service::serve(listener, AppState::new(b, args.fit_workers), shutdown).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Remote(cmd) => runtime()?.block_on(remote(cmd))?,
    }
    Ok(())
}

async fn remote(cmd: RemoteCmd) -> Result<()> {
    match cmd {
        RemoteCmd::Meta { url } => {
            let meta = Client::new(url).meta().await?;
            println!("{}", serde_json::to_string_pretty(&meta)?);
        }
        RemoteCmd::Eval { url, params, binary } => {
            let client = Client::new(url);
            let req = params.request()?;
            let (vertices, faces, uvs, texture) = if binary {
                let r = client.eval_binary(&req).await?;
                let tex = TextureImage::from_rgb8(r.width, r.height, &r.rgb8)?;
                (r.vertices, r.faces, r.uvs, tex)
            } else {
                let r = client.eval(&req).await?;
                let raw = base64_decode(&r.texture.rgb8_base64)?;
                let tex = TextureImage::from_rgb8(r.texture.w, r.texture.h, &raw)?;
                (r.vertices, r.faces, r.uvs, tex)
            };
            let mesh = Mesh::new(
                vertices.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
                faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                uvs.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            )?;
            write_eval_outputs(&mesh, Some(&texture), &params)?;
        }
        RemoteCmd::Fit {
            url,
            target,
            out,
            options,
        } => {
            let scene = Scene::load(&target)?;
            let cfg = options.resolve(&scene)?;
            let result = Client::new(url).fit(&FitRequest::from_scene(&scene, cfg)).await?;
            write_json(&out, &report(None, &scene, result)?)?;
        }
    }
    Ok(())
}

fn base64_decode(s: &str) -> Result<Vec<u8>> {
    use base64::Engine as _;
    Ok(base64::engine::general_purpose::STANDARD.decode(s)?)
}

fn error_body(err: &anyhow::Error) -> ErrorBody {
    if let Some(e) = err.downcast_ref::<bipar_core::Error>() {
        return ErrorBody::from(e);
    }
    if let Some(e) = err.downcast_ref::<ClientError>() {
        return match e {
            ClientError::Api { body, .. } => body.clone(),
            ClientError::Http(_) => ErrorBody {
                error: e.to_string(),
                kind: "http".into(),
                last_good: None,
            },
            ClientError::Decode(_) => ErrorBody {
                error: e.to_string(),
                kind: "decode".into(),
                last_good: None,
            },
        };
    }
    let kind = if err.downcast_ref::<serde_json::Error>().is_some() {
        "json"
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else {
        "invalid"
    };
    ErrorBody {
        error: format!("{err:#}"),
        kind: kind.into(),
        last_good: None,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("BIPAR_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let mut body = error_body(&err);
            if body.error.is_empty() {
                body.error = err.to_string();
            }
            eprintln!("{}", serde_json::to_string(&body).unwrap_or_else(|_| err.to_string()));
            ExitCode::FAILURE
        }
    }
}
