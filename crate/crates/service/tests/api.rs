use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use bipar_core::api::{ErrorBody, EvalRequest, FitRequest};
use bipar_core::bundle::{self, BundleMeta, EvalPayload, ModelBundle, SceneOptions};
use bipar_core::fit::{FitConfig, FitResult};
use bipar_core::shape::fit_pca;
use bipar_core::synth::{Family, FamilyConfig};
use bipar_core::texture::fit_texture_pca;
use bipar_service::{router, AppState};
use http_body_util::BodyExt;
use tower::ServiceExt;

fn bundle() -> ModelBundle {
    let fam = Family::new(&FamilyConfig {
        texture_size: 8,
        ..FamilyConfig::default()
    })
    .unwrap();
    let samples = fam.samples(12).unwrap();
    let meshes: Vec<_> = samples.iter().map(|s| s.mesh.clone()).collect();
    let tex: Vec<_> = samples.iter().map(|s| s.texture.clone()).collect();
    ModelBundle::new(
        fit_pca(&meshes, 5).unwrap(),
        fam.skeleton.clone(),
        fam.landmarks.clone(),
        fit_texture_pca(&tex, 4).unwrap(),
        fam.eye_constants(),
    )
    .unwrap()
}

async fn call(app: axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn post(uri: &str, body: impl serde::Serialize) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(serde_json::to_vec(&body).unwrap()))
        .unwrap()
}

#[tokio::test]
async fn meta_reports_bundle_dims() {
    let b = Arc::new(bundle());
    let app = router(AppState::new(b.clone(), 2));
    let (status, body) = call(app, Request::get("/meta").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let meta: BundleMeta = serde_json::from_slice(&body).unwrap();
    assert_eq!(meta.pose_dim, 69);
    assert_eq!(meta.joint_names.len(), 23);
    assert_eq!(meta.shape_dim, b.manifest.shape_dim);
    assert_eq!(meta.tex_dim, b.manifest.tex_dim);
    assert_eq!(meta.vertex_count, b.manifest.vertex_count);
    assert_eq!(meta.sigma_shape.len(), meta.shape_dim);
}

#[tokio::test]
async fn eval_zero_is_mean_and_idempotent() {
    let b = Arc::new(bundle());
    let app = router(AppState::new(b.clone(), 2));
    let (s1, r1) = call(app.clone(), post("/eval", EvalRequest::default())).await;
    let (s2, r2) = call(app, post("/eval", EvalRequest::default())).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(r1, r2);
    let payload: EvalPayload = serde_json::from_slice(&r1).unwrap();
    assert_eq!(payload.vertices, b.body.shape.mean.flat_positions());
    assert_eq!(payload.faces.len(), 3 * b.manifest.face_count);
    assert_eq!(payload.uvs.len(), 2 * b.manifest.vertex_count);
    assert_eq!(payload.texture.w, 8);
}

#[tokio::test]
async fn binary_matches_json() {
    let b = Arc::new(bundle());
    let app = router(AppState::new(b.clone(), 2));
    let mut theta = vec![0.0; 69];
    theta[10] = 0.4;
    let req = EvalRequest {
        theta: Some(theta),
        beta: Some(vec![0.01; b.manifest.shape_dim]),
        tex: None,
    };
    let (_, json) = call(app.clone(), post("/eval", &req)).await;
    let (status, bin) = call(app, post("/eval?format=binary", &req)).await;
    assert_eq!(status, StatusCode::OK);
    let json: EvalPayload = serde_json::from_slice(&json).unwrap();
    let bin = bundle::decode_binary(&bin).unwrap();
    assert_eq!(bin.vertices, json.vertices);
    assert_eq!(bin.faces, json.faces);
    assert_eq!(bin.uvs, json.uvs);
}

#[tokio::test]
async fn eval_dimension_error_is_json() {
    let app = router(AppState::new(Arc::new(bundle()), 2));
    let req = EvalRequest {
        theta: Some(vec![0.0; 5]),
        ..EvalRequest::default()
    };
    let (status, body) = call(app.clone(), post("/eval", &req)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: ErrorBody = serde_json::from_slice(&body).unwrap();
    assert_eq!(err.kind, "dimension");

    let bad = Request::post("/eval").body(Body::from("{not json")).unwrap();
    let (status, body) = call(app.clone(), bad).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(serde_json::from_slice::<ErrorBody>(&body).unwrap().kind, "bad_request");

    let (status, _) = call(app, post("/eval?format=xml", EvalRequest::default())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn fit_recovers_scene() {
    let b = Arc::new(bundle());
    let app = router(AppState::new(b.clone(), 1));
    let scene = bundle::generate_scene(&b.body, &SceneOptions::default()).unwrap();
    let truth = scene.truth.clone().unwrap();
    let (status, body) = call(app, post("/fit", FitRequest::from_scene(&scene, FitConfig::default()))).await;
    assert_eq!(status, StatusCode::OK);
    let r: FitResult = serde_json::from_slice(&body).unwrap();
    assert!(r.converged);
    for (a, b) in r.theta.iter().zip(&truth.theta.0) {
        assert!((a - b).abs() <= 1e-2);
    }
}

#[tokio::test]
async fn concurrent_fits_share_the_pool() {
    let b = Arc::new(bundle());
    let app = router(AppState::new(b.clone(), 2));
    let scene = bundle::generate_scene(&b.body, &SceneOptions {
        with_vertices: false,
        ..SceneOptions::default()
    })
    .unwrap();
    let req = FitRequest::from_scene(&scene, FitConfig {
        max_iters: 5,
        ..FitConfig::default()
    });
    let calls = (0..4).map(|_| call(app.clone(), post("/fit", &req)));
    let results = futures_join(calls).await;
    let first = &results[0].1;
    for (status, body) in &results {
        assert_eq!(*status, StatusCode::OK);
        assert_eq!(body, first);
    }
}

async fn futures_join<F: std::future::Future<Output = T> + Send + 'static, T: Send + 'static>(
    futs: impl Iterator<Item = F>,
) -> Vec<T> {
    let handles: Vec<_> = futs.map(tokio::spawn).collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test]
async fn fit_without_targets_is_rejected() {
    let app = router(AppState::new(Arc::new(bundle()), 2));
    let (status, body) = call(app, post("/fit", FitRequest::default())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(serde_json::from_slice::<ErrorBody>(&body).unwrap().kind, "invalid");
}
