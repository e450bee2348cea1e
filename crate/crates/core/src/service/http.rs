//! HTTP generation API over a loaded, immutable artifact.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use crate::artifact::Artifact;
use crate::error::Error;
use crate::generator::{generate, GenerationRequest, GuardConfig, MAX_COUNT};
use crate::profile_store::{Condition, EnergyRating, LabelVector, PropertyType, PERIODS};

pub struct AppState {
    artifact: Artifact,
    guard: GuardConfig,
    tokens: Vec<String>,
    seed: u64,
    requests: AtomicU64,
    model_version: String,
}

impl AppState {
    pub fn new(artifact: Artifact, guard: GuardConfig, tokens: Vec<String>, seed: u64) -> Self {
        let model_version = artifact.version_id();
        AppState { artifact, guard, tokens, seed, requests: AtomicU64::new(0), model_version }
    }

    /// Seed for a request without one: the service seed offset by the
    /// request counter.
    fn next_seed(&self) -> u64 {
        self.seed.wrapping_add(self.requests.fetch_add(1, Ordering::Relaxed))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateBody {
    #[serde(default)]
    pub condition: Condition,
    pub count: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiDiagnostics {
    pub acceptance_rate: f64,
    pub attempts: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub profiles: Vec<Vec<f64>>,
    pub labels: Vec<LabelVector>,
    pub diagnostics: ApiDiagnostics,
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": code, "message": message.into() }))).into_response()
}

async fn auth(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(t) if state.tokens.iter().any(|k| k == t) => next.run(req).await,
        _ => error(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token"),
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn metadata(State(state): State<Arc<AppState>>) -> Json<Value> {
    let tokens = |it: &mut dyn Iterator<Item = &'static str>| it.collect::<Vec<_>>();
    Json(json!({
        "schema": {
            "periods": PERIODS,
            "attributes": {
                "has_ev": "boolean",
                "has_heat_pump": "boolean",
                "smart_tariff": "boolean",
                "property_type": tokens(&mut PropertyType::ALL.iter().map(|p| p.token())),
                "energy_rating": tokens(&mut EnergyRating::ALL.iter().map(|r| r.token())),
            },
            "max_count": MAX_COUNT,
        },
        "guards": {
            "min_fraction": state.guard.min_fraction,
            "min_households": state.guard.min_households,
        },
        "model_version": state.model_version,
    }))
}

async fn generate_handler(
    State(state): State<Arc<AppState>>,
    body: Result<Json<GenerateBody>, JsonRejection>,
) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()),
    };
    let seed = body.seed.unwrap_or_else(|| state.next_seed());
    let req = GenerationRequest { condition: body.condition, count: body.count, seed };
    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        generate(&worker.artifact.model, &worker.artifact.mixture, &req, &worker.guard)
    })
    .await;
    match result {
        Ok(Ok(r)) => Json(GenerateResponse {
            profiles: r.profiles,
            labels: r.realized_labels,
            diagnostics: ApiDiagnostics {
                acceptance_rate: r.diagnostics.acceptance_rate,
                attempts: r.diagnostics.attempts,
            },
        })
        .into_response(),
        Ok(Err(Error::GuardRefused(reason))) => {
            error(StatusCode::FORBIDDEN, "population_guard", reason.to_string())
        }
        Ok(Err(Error::BudgetExhausted { requested, attempts, accepted })) => error(
            StatusCode::UNPROCESSABLE_ENTITY,
            "acceptance_rate_too_low",
            format!(
                "accepted {accepted} of {requested} requested profiles in {attempts} draws (rate {:.2e})",
                accepted as f64 / attempts.max(1) as f64
            ),
        ),
        Ok(Err(Error::InvalidArgument(m))) => error(StatusCode::BAD_REQUEST, "invalid_request", m),
        Ok(Err(e)) => {
            warn!(error = %e, "generation failed");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal", "generation failed")
        }
        Err(e) => {
            warn!(error = %e, "generation task failed");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal", "generation failed")
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let protected = Router::new()
        .route("/v1/generate", post(generate_handler))
        .route("/v1/metadata", get(metadata))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth));
    Router::new().route("/v1/health", get(health)).merge(protected).with_state(state)
}
