use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use paris::pipeline::{
    recommendation_json, run_pipeline, ModelBundle, PipelineConfig, RecommendRequest,
};
use paris::recommend::default_rules;
use paris::synth::{generate_cohort, CohortSpec};
use paris_service::{router, AppState, ServiceConfig, ADMIN_TOKEN_HEADER};
use serde_json::{json, Value};
use tower::ServiceExt;

fn fitted() -> &'static ModelBundle {
    static B: OnceLock<ModelBundle> = OnceLock::new();
    B.get_or_init(|| {
        let c = generate_cohort(&CohortSpec {
            n_subjects: 3,
            noise_sd: 300.0,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.recipes.min_cluster_days = 1;
        run_pipeline(c.epochs_csv.as_slice(), c.metadata_csv.as_slice(), &cfg)
            .unwrap()
            .bundle
    })
}

fn config() -> ServiceConfig {
    ServiceConfig {
        rules: default_rules(),
        admin_token: Some("sesame".into()),
        ..Default::default()
    }
}

fn loaded() -> Arc<AppState> {
    AppState::with_bundle(config(), fitted().clone())
}

async fn call(state: Arc<AppState>, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(state).oneshot(req).await.unwrap();
    let status = resp.status();
    (
        status,
        resp.into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec(),
    )
}

async fn get(state: Arc<AppState>, uri: &str) -> (StatusCode, Value) {
    let (s, body) = call(state, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&body).unwrap())
}

async fn post(state: Arc<AppState>, uri: &str, body: String) -> (StatusCode, Vec<u8>) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    call(state, req).await
}

fn request(t_m: u32) -> RecommendRequest {
    RecommendRequest {
        subject_id: "S001".into(),
        t_m,
        partial_counts: fitted().subjects["S001"].modes.centroids[0][..t_m as usize].to_vec(),
        metadata: None,
        rules: None,
        wake_onset: Some(360),
    }
}

#[tokio::test]
async fn lists_subjects_in_order() {
    let (s, v) = get(loaded(), "/api/v1/subjects").await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["subject_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["S001", "S002", "S003"]);
    assert_eq!(v[0]["k"], 2);
    assert!(v[0]["recipe_counts"].is_array());
}

#[tokio::test]
async fn empty_bundle_lists_nothing() {
    let state = AppState::with_bundle(config(), ModelBundle::empty(PipelineConfig::default()));
    let (s, v) = get(state, "/api/v1/subjects").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!([]));
}

#[tokio::test]
async fn unloaded_bundle_is_503() {
    let state = AppState::new(config());
    let (s, v) = get(state.clone(), "/api/v1/subjects").await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["code"], "BundleNotLoaded");
    let (s, _) = post(
        state,
        "/api/v1/recommend",
        serde_json::to_string(&request(600)).unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn modes_and_recipes() {
    let (s, v) = get(loaded(), "/api/v1/subjects/S002/modes").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["k"], 2);
    assert_eq!(v["centroids"][0].as_array().unwrap().len(), 1440);
    let (s, v) = get(loaded(), "/api/v1/subjects/S002/recipes").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        v,
        serde_json::to_value(&fitted().subjects["S002"].recipes).unwrap()
    );
    for uri in [
        "/api/v1/subjects/nobody/modes",
        "/api/v1/subjects/nobody/recipes",
    ] {
        let (s, v) = get(loaded(), uri).await;
        assert_eq!(s, StatusCode::NOT_FOUND);
        assert_eq!(v["code"], "UnknownSubject");
    }
}

#[tokio::test]
async fn downsampled_centroids_are_block_means() {
    let (s, v) = get(loaded(), "/api/v1/subjects/S001/modes?downsample=10").await;
    assert_eq!(s, StatusCode::OK);
    let full = &fitted().subjects["S001"].modes.centroids;
    for (c, got) in full.iter().zip(v["centroids"].as_array().unwrap()) {
        let got: Vec<f64> = serde_json::from_value(got.clone()).unwrap();
        assert_eq!(got.len(), 144);
        for (b, g) in got.iter().enumerate() {
            let mut sum = 0.0;
            for m in b * 10..b * 10 + 10 {
                sum += c[m];
            }
            assert!((g - sum / 10.0).abs() <= 1e-9 * sum.abs().max(1.0));
        }
    }
    let (s, v) = get(loaded(), "/api/v1/subjects/S001/modes?downsample=0").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "InvalidRequest");
}

#[tokio::test]
async fn recommend_matches_library_bytes() {
    let req = request(600);
    let expected = recommendation_json(&fitted().recommend(&req, &default_rules()).unwrap());
    let body = serde_json::to_string(&req).unwrap();
    let (s, a) = post(loaded(), "/api/v1/recommend", body.clone()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(a.clone()).unwrap(), expected);
    let (_, b) = post(loaded(), "/api/v1/recommend", body).await;
    assert_eq!(a, b);
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert!(v["explain"]["probabilities"].is_array());
}

#[tokio::test]
async fn recommend_errors() {
    let mut req = request(600);
    req.partial_counts.pop();
    let (s, body) = post(
        loaded(),
        "/api/v1/recommend",
        serde_json::to_string(&req).unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        serde_json::from_slice::<Value>(&body).unwrap()["code"],
        "LengthMismatch"
    );

    let body = json!({"subject_id": "S001", "t_m": 0, "partial_counts": []}).to_string();
    let (s, body) = post(loaded(), "/api/v1/recommend", body).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        serde_json::from_slice::<Value>(&body).unwrap()["code"],
        "BadWindow"
    );

    let mut unknown = request(600);
    unknown.subject_id = "nobody".into();
    let (s, _) = post(
        loaded(),
        "/api/v1/recommend",
        serde_json::to_string(&unknown).unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, body) = post(loaded(), "/api/v1/recommend", "{not json".into()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(
        serde_json::from_slice::<Value>(&body).unwrap()["code"],
        "InvalidRequest"
    );
}

#[tokio::test]
async fn empty_recipe_book_is_409() {
    let mut bundle = fitted().clone();
    for list in bundle
        .subjects
        .get_mut("S001")
        .unwrap()
        .recipes
        .modes
        .values_mut()
    {
        list.clear();
    }
    let state = AppState::with_bundle(config(), bundle);
    let (s, body) = post(
        state,
        "/api/v1/recommend",
        serde_json::to_string(&request(600)).unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(
        serde_json::from_slice::<Value>(&body).unwrap()["code"],
        "NoRecipesForMode"
    );
}

#[tokio::test]
async fn admin_reload_swaps_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.json");
    let mut smaller = fitted().clone();
    smaller.subjects.remove("S003");
    smaller.save(&path).unwrap();
    let state = AppState::with_bundle(
        ServiceConfig {
            bundle_path: Some(path),
            ..config()
        },
        fitted().clone(),
    );

    let reload = |token: Option<&str>| {
        let mut b = Request::post("/api/v1/admin/reload");
        if let Some(t) = token {
            b = b.header(ADMIN_TOKEN_HEADER, t);
        }
        b.body(Body::empty()).unwrap()
    };
    let (s, _) = call(state.clone(), reload(None)).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(state.clone(), reload(Some("wrong"))).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let before = state.bundle().unwrap();
    let (s, body) = call(state.clone(), reload(Some("sesame"))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        serde_json::from_slice::<Value>(&body).unwrap()["subjects"],
        2
    );
    // a holder of the old bundle still sees it whole
    assert_eq!(before.subjects.len(), 3);
    let (_, v) = get(state, "/api/v1/subjects").await;
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn reload_without_token_config_is_forbidden() {
    let state = AppState::with_bundle(ServiceConfig::default(), fitted().clone());
    let req = Request::post("/api/v1/admin/reload")
        .body(Body::empty())
        .unwrap();
    let (s, _) = call(state, req).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn cors_and_static_ui() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let state = AppState::with_bundle(
        ServiceConfig {
            ui_dir: Some(dir.path().to_path_buf()),
            ..config()
        },
        fitted().clone(),
    );
    let resp = router(state.clone())
        .oneshot(
            Request::get("/api/v1/subjects")
                .header("origin", "http://localhost:5173")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
    let (s, body) = call(
        state.clone(),
        Request::get("/index.html").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html>ui</html>");
    let (s, v) = get(state, "/api/v1/nope").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "NotFound");
}

#[tokio::test]
async fn restricted_cors_origin() {
    let state = AppState::with_bundle(
        ServiceConfig {
            cors_origins: vec!["http://ui.example".into()],
            ..config()
        },
        fitted().clone(),
    );
    let resp = router(state)
        .oneshot(
            Request::get("/api/v1/subjects")
                .header("origin", "http://ui.example")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(
        resp.headers()["access-control-allow-origin"],
        "http://ui.example"
    );
}
