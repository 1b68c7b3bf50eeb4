//! HTTP suggestion service: `POST /suggest`, `GET /health`, `GET /config`.

use std::any::Any;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::catch_panic::CatchPanicLayer;
use tower_http::cors::{AllowOrigin, Any as AnyOrigin, CorsLayer};

use simsr_core::evalharness::compose_message;
use simsr_core::simulation::SearchStrategy;
use simsr_core::{Engine, Error, SuggestConfig, Suggestion, System};

/// Per-request overrides of the service defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub tau: Option<f64>,
    /// A system name (`matching`, `simsr`, ...) or a search strategy
    /// (`exhaustive`, `ablative`, `greedy`, `sample_rank`).
    pub strategy: Option<String>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestRequest {
    pub message: String,
    #[serde(default)]
    pub persona: Vec<String>,
    #[serde(default)]
    pub overrides: Overrides,
}

pub type SuggestResponse = Suggestion;

/// Active defaults as reported by `GET /config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResponse {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub tau: f64,
    pub strategy: String,
    pub seed: u64,
    pub samples: usize,
    pub pool_size: usize,
    pub systems: Vec<String>,
    pub strategies: Vec<String>,
}

/// Apply `overrides` on top of `defaults`. Explicit values must fit the
/// pool; defaults are clamped later by the engine.
pub fn apply_overrides(defaults: &SuggestConfig, o: &Overrides, pool_size: usize) -> simsr_core::Result<SuggestConfig> {
    let mut cfg = *defaults;
    if let Some(k) = o.k {
        if k > pool_size {
            return Err(Error::KExceedsPool { k, pool: pool_size });
        }
        cfg.k = k;
    }
    for (what, value, slot) in [("n", o.n, &mut cfg.n), ("m", o.m, &mut cfg.m)] {
        if let Some(v) = value {
            if v > pool_size {
                return Err(Error::ExceedsPool {
                    what,
                    value: v,
                    pool: pool_size,
                });
            }
            *slot = v;
        }
    }
    if let Some(tau) = o.tau {
        cfg.temperature = tau;
    }
    if let Some(s) = &o.strategy {
        cfg.system = s.parse::<System>().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(samples) = o.samples {
        cfg.samples = samples;
    }
    Ok(cfg)
}

/// Errors caused by the request rather than the service.
pub fn is_client_error(e: &Error) -> bool {
    matches!(
        e,
        Error::KExceedsPool { .. }
            | Error::KExceedsShortlist { .. }
            | Error::ExceedsPool { .. }
            | Error::InvalidConfig(_)
            | Error::EmptySelection
    )
}

pub struct AppState {
    pub engine: Engine,
    pub defaults: SuggestConfig,
}

impl AppState {
    pub fn new(engine: Engine) -> Self {
        AppState {
            engine,
            defaults: SuggestConfig::default(),
        }
    }

    pub fn config(&self) -> ConfigResponse {
        let d = &self.defaults;
        ConfigResponse {
            k: d.k,
            n: d.n,
            m: d.m,
            tau: d.temperature,
            strategy: d.system.name(),
            seed: d.seed,
            samples: d.samples,
            pool_size: self.engine.pool().len(),
            systems: System::REGISTRY.iter().map(|s| s.to_string()).collect(),
            strategies: SearchStrategy::ALL.iter().map(|s| s.as_str().to_string()).collect(),
        }
    }

    /// Validate and run one request.
    pub fn suggest(&self, req: &SuggestRequest) -> Result<SuggestResponse, ApiError> {
        if req.message.trim().is_empty() {
            return Err(ApiError::bad_request("message must not be empty"));
        }
        let cfg = apply_overrides(&self.defaults, &req.overrides, self.engine.pool().len()).map_err(ApiError::from)?;
        let message = compose_message(&req.persona, &req.message);
        self.engine.suggest(&message, &cfg).map_err(ApiError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    /// Correlates a 500 response with the server log.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: message.into(),
                id: None,
            },
        }
    }

    /// Logs `detail` under a fresh id and returns an opaque 500.
    pub fn internal(detail: &str) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        eprintln!("internal error {id}: {detail}");
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                error: "internal error".into(),
                id: Some(id),
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        if is_client_error(&e) {
            ApiError::bad_request(e.to_string())
        } else {
            ApiError::internal(&e.to_string())
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

async fn suggest(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<SuggestResponse>, ApiError> {
    let req: SuggestRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request: {e}")))?;
    state.suggest(&req).map(Json)
}

async fn health() -> &'static str {
    "ok"
}

async fn config(State(state): State<Arc<AppState>>) -> Json<ConfigResponse> {
    Json(state.config())
}

fn panic_response(err: Box<dyn Any + Send + 'static>) -> Response<Body> {
    let detail = err
        .downcast_ref::<String>()
        .map(String::as_str)
        .or_else(|| err.downcast_ref::<&str>().copied())
        .unwrap_or("panic");
    ApiError::internal(detail).into_response()
}

/// CORS for the given origins; `*` allows any origin.
pub fn cors_layer(origins: &[String]) -> anyhow::Result<CorsLayer> {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    if origins.iter().any(|o| o == "*") {
        return Ok(layer.allow_origin(AnyOrigin));
    }
    let values = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| anyhow::anyhow!("invalid CORS origin {o:?}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(layer.allow_origin(AllowOrigin::list(values)))
}

pub fn router(state: Arc<AppState>, cors: Option<CorsLayer>) -> Router {
    let mut app = Router::new()
        .route("/suggest", post(suggest))
        .route("/health", get(health))
        .route("/config", get(config))
        .with_state(state)
        .layer(CatchPanicLayer::custom(panic_response));
    if let Some(cors) = cors {
        app = app.layer(cors);
    }
    app
}

/// Serve until Ctrl-C.
pub async fn serve(app: Router, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
