//! HTTP API over a fitted model bundle.
//!
//! Routes live under `/api/v1`. Every error is a JSON body `{code, message}`.
//! The bundle is shared read-only; an admin reload swaps it atomically, and
//! requests already running keep the bundle they started with.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use paris::metrics::MetricId;
use paris::pipeline::{
    recommendation_json, ModelBundle, PipelineError, QueryError, RecommendRequest,
};
use paris::recommend::ConstraintRule;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_loaded() -> Self {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "BundleNotLoaded",
            "model bundle is not loaded yet",
        )
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let code = e.code();
        let status = match code {
            "UnknownSubject" => StatusCode::NOT_FOUND,
            "NoRecipesForMode" => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Re-read by the admin reload endpoint.
    pub bundle_path: Option<PathBuf>,
    /// Rules applied when a request carries none.
    pub rules: Vec<ConstraintRule>,
    /// Reload is refused when unset.
    pub admin_token: Option<String>,
    /// Allowed browser origins; empty allows any.
    pub cors_origins: Vec<String>,
    /// Static files served at the root.
    pub ui_dir: Option<PathBuf>,
}

pub struct AppState {
    bundle: RwLock<Option<Arc<ModelBundle>>>,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            bundle: RwLock::new(None),
            config,
        })
    }

    pub fn with_bundle(config: ServiceConfig, bundle: ModelBundle) -> Arc<Self> {
        let state = Self::new(config);
        state.set_bundle(bundle);
        state
    }

    pub fn set_bundle(&self, bundle: ModelBundle) {
        *self.bundle.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(bundle));
    }

    pub fn bundle(&self) -> Option<Arc<ModelBundle>> {
        self.bundle
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    /// Load the configured bundle file and swap it in.
    pub fn reload(&self) -> Result<usize, PipelineError> {
        let path =
            self.config.bundle_path.as_deref().ok_or_else(|| {
                PipelineError::Io(std::io::Error::other("no bundle path configured"))
            })?;
        let bundle = ModelBundle::load(path)?;
        let n = bundle.subjects.len();
        self.set_bundle(bundle);
        Ok(n)
    }

    fn loaded(&self) -> Result<Arc<ModelBundle>, ApiError> {
        self.bundle().ok_or_else(ApiError::not_loaded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject_id: String,
    pub k: usize,
    pub metric: MetricId,
    pub silhouette: f64,
    pub recipe_counts: Vec<usize>,
}

async fn list_subjects(
    State(state): State<Arc<AppState>>,
) -> Result<Json<Vec<SubjectSummary>>, ApiError> {
    let bundle = state.loaded()?;
    Ok(Json(
        bundle
            .subjects
            .iter()
            .map(|(id, s)| SubjectSummary {
                subject_id: id.clone(),
                k: s.modes.k,
                metric: s.modes.metric,
                silhouette: s.modes.silhouette,
                recipe_counts: (0..s.modes.k)
                    .map(|m| s.recipes.recipes_for(m).len())
                    .collect(),
            })
            .collect(),
    ))
}

#[derive(Debug, Deserialize)]
struct ModesQuery {
    downsample: Option<usize>,
}

/// Mean of each consecutive block of `n` values; a short last block is averaged as is.
pub fn block_means(values: &[f64], n: usize) -> Vec<f64> {
    values
        .chunks(n)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

async fn subject_modes(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ModesQuery>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let bundle = state.loaded()?;
    let model = &bundle.subject(&id)?.modes;
    let mut body = serde_json::to_value(model).expect("mode model serializes");
    match q.downsample {
        Some(0) => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "InvalidRequest",
                "downsample must be >= 1",
            ))
        }
        Some(n) => {
            let reduced: Vec<Vec<f64>> =
                model.centroids.iter().map(|c| block_means(c, n)).collect();
            body["centroids"] = serde_json::to_value(reduced).expect("centroids serialize");
        }
        None => {}
    }
    Ok(Json(body))
}

async fn subject_recipes(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let bundle = state.loaded()?;
    let book = &bundle.subject(&id)?.recipes;
    Ok(Json(
        serde_json::to_value(book).expect("recipe book serializes"),
    ))
}

async fn post_recommend(
    State(state): State<Arc<AppState>>,
    body: Result<Json<RecommendRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) =
        body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidRequest", e.body_text()))?;
    let bundle = state.loaded()?;
    let rec = bundle.recommend(&req, &state.config.rules)?;
    // Serialized by hand so the bytes match every other interface.
    Ok((
        [(
            axum::http::header::CONTENT_TYPE,
            HeaderValue::from_static("application/json"),
        )],
        recommendation_json(&rec),
    )
        .into_response())
}

#[derive(Debug, Serialize)]
struct ReloadResponse {
    subjects: usize,
}

async fn admin_reload(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
) -> Result<Json<ReloadResponse>, ApiError> {
    let Some(expected) = state.config.admin_token.as_deref() else {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "ReloadDisabled",
            "no admin token configured",
        ));
    };
    let given = headers
        .get(ADMIN_TOKEN_HEADER)
        .and_then(|v| v.to_str().ok());
    if given != Some(expected) {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "Unauthorized",
            "missing or wrong admin token",
        ));
    }
    let state2 = state.clone();
    let subjects = tokio::task::spawn_blocking(move || state2.reload())
        .await
        .map_err(|e| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "ReloadFailed",
                e.to_string(),
            )
        })?
        .map_err(|e| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "ReloadFailed",
                e.to_string(),
            )
        })?;
    log::info!("reloaded bundle with {subjects} subjects");
    Ok(Json(ReloadResponse { subjects }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route")
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins
        .iter()
        .filter_map(|o| HeaderValue::from_str(o).ok())
        .collect();
    layer.allow_origin(AllowOrigin::list(list))
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/subjects", get(list_subjects))
        .route("/subjects/{id}/modes", get(subject_modes))
        .route("/subjects/{id}/recipes", get(subject_recipes))
        .route("/recommend", post(post_recommend))
        .route("/admin/reload", post(admin_reload))
        .fallback(not_found);
    let mut app = Router::new().nest("/api/v1", api);
    if let Some(dir) = &state.config.ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(cors(&state.config.cors_origins))
        .with_state(state)
}

/// Serve until the process is interrupted. The bundle at `config.bundle_path`
/// is loaded in the background, so early requests see `BundleNotLoaded`.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config);
    if state.config.bundle_path.is_some() {
        let loader = state.clone();
        tokio::task::spawn_blocking(move || match loader.reload() {
            Ok(n) => log::info!("loaded bundle with {n} subjects"),
            Err(e) => log::error!("bundle load failed: {e}"),
        });
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
