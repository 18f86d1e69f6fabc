//! HTTP service for the studio. Every body carries `schema_version`;
//! requests are stateless and the checkpoint is shared read-only.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use qdtile::dataset::{Level, SCHEMA_VERSION};
use qdtile::features::FEATURE_COUNT;
use qdtile::lm::{Checkpoint, SamplingParams};
use qdtile::pipeline::{GenerationRequest, GenerationResult, Pipeline, Region};
use qdtile::{AdjacencyRules, FeatureConfig, FunctionalCategory, Layout, TileCatalog};

use crate::prompt::normalize_prompt;

pub struct AppState {
    pub catalog: TileCatalog,
    pub rules: AdjacencyRules,
    pub checkpoint: Checkpoint,
    pub features: FeatureConfig,
}

impl AppState {
    /// Fails when the checkpoint was trained on another catalog.
    pub fn new(catalog: TileCatalog, rules: AdjacencyRules, checkpoint: Checkpoint, features: FeatureConfig) -> qdtile::Result<Self> {
        checkpoint.check_compat(&catalog.hash(), None)?;
        Ok(AppState {
            catalog,
            rules,
            checkpoint,
            features,
        })
    }

    fn pipeline(&self) -> Pipeline<'_> {
        Pipeline::new(&self.catalog, &self.rules, &self.checkpoint, self.features).expect("compatibility checked at startup")
    }
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    pub schema_version: u32,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

pub struct Rejection(StatusCode, ApiError);

impl Rejection {
    fn bad(field: Option<&str>, msg: impl Into<String>) -> Self {
        Rejection(
            StatusCode::BAD_REQUEST,
            ApiError {
                schema_version: SCHEMA_VERSION,
                error: msg.into(),
                field: field.map(String::from),
            },
        )
    }
}

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, Rejection> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = (path != ".").then_some(path);
        Rejection::bad(field.as_deref(), e.into_inner().to_string())
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateBody {
    #[serde(default)]
    pub schema_version: Option<u32>,
    /// Per-feature levels; `null` entries are drawn at random.
    #[serde(default)]
    pub labels: Option<[Option<Level>; FEATURE_COUNT]>,
    /// Free-text alternative to `labels`.
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegenerateBody {
    #[serde(default)]
    pub schema_version: Option<u32>,
    pub base_layout: Layout,
    pub region: Region,
    #[serde(default)]
    pub labels: Option<[Option<Level>; FEATURE_COUNT]>,
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub schema_version: u32,
    pub result: GenerationResult,
}

struct Common<'a> {
    schema_version: Option<u32>,
    labels: Option<[Option<Level>; FEATURE_COUNT]>,
    prompt: &'a Option<String>,
    seed: Option<u64>,
    temperature: Option<f64>,
    top_k: Option<usize>,
    restarts: Option<usize>,
}

fn build_request(c: Common) -> Result<GenerationRequest, Rejection> {
    if let Some(v) = c.schema_version {
        if v != SCHEMA_VERSION {
            return Err(Rejection::bad(
                Some("schema_version"),
                format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"),
            ));
        }
    }
    let labels = match (c.labels, c.prompt) {
        (Some(_), Some(_)) => return Err(Rejection::bad(Some("prompt"), "give either labels or prompt, not both")),
        (Some(l), None) => l,
        (None, Some(p)) => normalize_prompt(p).map_err(|e| Rejection::bad(Some("prompt"), e.to_string()))?,
        (None, None) => [None; FEATURE_COUNT],
    };
    let defaults = SamplingParams::default();
    let sampling = SamplingParams {
        temperature: c.temperature.unwrap_or(defaults.temperature),
        top_k: c.top_k.unwrap_or(defaults.top_k),
    };
    if !(sampling.temperature.is_finite() && sampling.temperature > 0.0) {
        return Err(Rejection::bad(Some("temperature"), "temperature must be a positive number"));
    }
    if sampling.top_k == 0 {
        return Err(Rejection::bad(Some("top_k"), "top_k must be at least 1"));
    }
    let restarts = c.restarts.unwrap_or(0);
    if restarts > 100 {
        return Err(Rejection::bad(Some("restarts"), "restarts must be at most 100"));
    }
    Ok(GenerationRequest {
        labels,
        seed: c.seed.unwrap_or(0),
        sampling,
        restarts,
        base_layout: None,
        region: None,
    })
}

async fn run(state: Arc<AppState>, req: GenerationRequest) -> Result<Json<GenerateResponse>, Rejection> {
    let out = tokio::task::spawn_blocking(move || state.pipeline().generate(&req))
        .await
        .map_err(|e| Rejection(StatusCode::INTERNAL_SERVER_ERROR, ApiError {
            schema_version: SCHEMA_VERSION,
            error: e.to_string(),
            field: None,
        }))?;
    match out {
        Ok(result) => Ok(Json(GenerateResponse {
            schema_version: SCHEMA_VERSION,
            result,
        })),
        Err(e) => Err(Rejection::bad(None, e.to_string())),
    }
}

async fn generate(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<GenerateResponse>, Rejection> {
    let b: GenerateBody = parse_body(&body)?;
    let req = build_request(Common {
        schema_version: b.schema_version,
        labels: b.labels,
        prompt: &b.prompt,
        seed: b.seed,
        temperature: b.temperature,
        top_k: b.top_k,
        restarts: b.restarts,
    })?;
    run(state, req).await
}

async fn regenerate(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<GenerateResponse>, Rejection> {
    let b: RegenerateBody = parse_body(&body)?;
    let mut req = build_request(Common {
        schema_version: b.schema_version,
        labels: b.labels,
        prompt: &b.prompt,
        seed: b.seed,
        temperature: b.temperature,
        top_k: b.top_k,
        restarts: b.restarts,
    })?;
    let h = &state.checkpoint.header;
    let base = &b.base_layout;
    if (base.height, base.width) != (h.height, h.width) || base.tiles.len() != h.height * h.width {
        return Err(Rejection::bad(
            Some("base_layout"),
            format!("expected a {}x{} layout with {} tiles", h.width, h.height, h.height * h.width),
        ));
    }
    if let Some(t) = base.tiles.iter().find(|t| t.index() >= state.catalog.len()) {
        return Err(Rejection::bad(Some("base_layout.tiles"), format!("unknown tile id {t}")));
    }
    if let Some(v) = state.rules.violations(base).first() {
        return Err(Rejection::bad(
            Some("base_layout"),
            format!("base layout violates adjacency at cell {} ({:?})", v.cell, v.dir),
        ));
    }
    if !b.region.in_bounds(h.height, h.width) {
        return Err(Rejection::bad(Some("region"), "region extends past the site"));
    }
    req.base_layout = Some(b.base_layout);
    req.region = Some(b.region);
    run(state, req).await
}

async fn catalog(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let categories: Vec<_> = FunctionalCategory::ALL
        .iter()
        .map(|&c| {
            let [r, g, b] = c.color_hint();
            json!({
                "token": c.token_char().to_string(),
                "name": c.name(),
                "color": format!("#{r:02x}{g:02x}{b:02x}"),
                "tiles": state.catalog.allowed_tiles_for_category(c).iter().map(|t| t.index()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let tiles: Vec<_> = state
        .catalog
        .tiles()
        .iter()
        .map(|t| json!({"id": t.id.index(), "name": t.name, "category": t.category.name(), "orientation": t.orientation, "reflected": t.reflected}))
        .collect();
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "catalog_hash": state.catalog.hash(),
        "categories": categories,
        "tiles": tiles,
    }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let h = &state.checkpoint.header;
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "checkpoint_hash": state.checkpoint.hash(),
        "catalog_hash": h.catalog_hash,
        "schema_hash": h.schema_hash,
        "dataset_id": h.dataset_id,
        "height": h.height,
        "width": h.width,
        "step": h.step,
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/generate", post(generate))
        .route("/regenerate", post(regenerate))
        .route("/catalog", get(catalog))
        .route("/health", get(health))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
