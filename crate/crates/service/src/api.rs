//! HTTP/JSON API. Every route lives under `/api`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use freightrec_core::route::RankKey;
use freightrec_core::rules::RuleError;
use freightrec_core::scoring::ScoringError;
use freightrec_core::{MiningThresholds, RouteError, StoreError, TransportRequest};
use serde::Deserialize;
use serde_json::json;

use crate::engine::{Engine, EngineError, RatingInput};

pub fn router(engine: Arc<Engine>) -> Router {
    let api = Router::new()
        .route("/network", post(ingest))
        .route("/requests", post(create_request))
        .route("/requests/{id}/solutions", get(solutions))
        .route("/requests/{id}/recommendations", get(recommendations))
        .route("/solutions/{id}/details", get(details))
        .route("/solutions/{id}/select", post(select))
        .route("/transactions/{id}/complete", post(complete))
        .route("/transactions/{id}/ratings", post(rate))
        .route("/legs/{leg_id}/top-carriers", get(top_carriers))
        .route("/legs/{leg_id}/compare/{carrier_id}", get(compare))
        .route("/ratings/import", post(import_ratings))
        .route("/rules/mine", post(mine))
        .route("/rules", get(rules));
    Router::new().nest("/api", api).with_state(engine)
}

pub async fn serve(engine: Arc<Engine>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %engine.data_dir().display(), "listening");
    axum::serve(listener, router(engine)).await
}

pub struct ApiError(EngineError);

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError(e)
    }
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError(EngineError::Route(RouteError::InvalidRequest(message.into())))
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        use EngineError as E;
        match &self.0 {
            E::NoNetwork => (StatusCode::CONFLICT, "no_network"),
            E::UnknownRequest(_) => (StatusCode::NOT_FOUND, "unknown_request"),
            E::UnknownItinerary(_) => (StatusCode::NOT_FOUND, "unknown_itinerary"),
            E::UnknownLeg(_) => (StatusCode::NOT_FOUND, "unknown_leg"),
            E::AlreadySelected { .. } => (StatusCode::CONFLICT, "already_selected"),
            E::NoSolution { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "no_solution"),
            E::Network(_) => (StatusCode::BAD_REQUEST, "invalid_network"),
            E::Route(RouteError::UnknownTerminal(_)) => (StatusCode::BAD_REQUEST, "unknown_terminal"),
            E::Route(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
            E::Store(StoreError::UnknownTransaction(_)) => (StatusCode::NOT_FOUND, "unknown_transaction"),
            E::Store(StoreError::UnknownRequest(_)) => (StatusCode::NOT_FOUND, "unknown_request"),
            E::Store(
                StoreError::IllegalTransition { .. } | StoreError::NotCompleted(_) | StoreError::DuplicateRating { .. },
            ) => (StatusCode::CONFLICT, "conflict"),
            E::Store(StoreError::Io(_) | StoreError::Corrupt { .. }) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            E::Store(_) => (StatusCode::BAD_REQUEST, "invalid_rating"),
            E::Rules(RuleError::InvalidThreshold { .. }) => (StatusCode::BAD_REQUEST, "invalid_threshold"),
            E::Scoring(ScoringError::CarrierNotOnLeg { .. }) => (StatusCode::NOT_FOUND, "unknown_carrier"),
            E::Rules(_) | E::Scoring(_) | E::Corrupt { .. } | E::Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        let mut body = json!({ "error": code, "message": self.0.to_string() });
        if let EngineError::NoSolution { request_id, diagnostic } = &self.0 {
            body["request_id"] = json!(request_id);
            body["diagnostic"] = json!(diagnostic);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSource {
    path: Option<String>,
    csv: Option<String>,
}

/// Accepts a JSON `{path}` or `{csv}` body, a multipart upload (first file
/// part), or the raw CSV as the body.
async fn ingest(State(engine): State<Arc<Engine>>, req: Request) -> ApiResult<crate::engine::IngestReport> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let report = if content_type.starts_with("application/json") {
        let Json(source) = Json::<NetworkSource>::from_request(req, &())
            .await
            .map_err(|e| bad_request(e.body_text()))?;
        match (source.path, source.csv) {
            (Some(path), None) => engine.ingest_path(path)?,
            (None, Some(csv)) => engine.ingest(csv.as_bytes())?,
            _ => return Err(bad_request("expected exactly one of `path` or `csv`")),
        }
    } else if content_type.starts_with("multipart/form-data") {
        let mut multipart = Multipart::from_request(req, &())
            .await
            .map_err(|e| bad_request(e.body_text()))?;
        let field = multipart
            .next_field()
            .await
            .map_err(|e| bad_request(e.body_text()))?
            .ok_or_else(|| bad_request("multipart body has no parts"))?;
        let data = field.bytes().await.map_err(|e| bad_request(e.body_text()))?;
        engine.ingest(data.as_ref())?
    } else {
        let data = Bytes::from_request(req, &())
            .await
            .map_err(|e| bad_request(e.body_text()))?;
        engine.ingest(data.as_ref())?
    };
    Ok(Json(report))
}

async fn create_request(
    State(engine): State<Arc<Engine>>,
    body: Result<Json<TransportRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<crate::engine::SessionView> {
    let Json(request) = body.map_err(|e| bad_request(e.body_text()))?;
    Ok(Json(engine.create_request(request)?))
}

#[derive(Deserialize)]
struct SortQuery {
    sort: Option<String>,
}

async fn solutions(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(q): Query<SortQuery>,
) -> ApiResult<crate::engine::SessionView> {
    let sort = q
        .sort
        .map(|s| s.parse::<RankKey>())
        .transpose()
        .map_err(|e| ApiError(e.into()))?;
    Ok(Json(engine.solutions(&id, sort)?))
}

async fn recommendations(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<crate::engine::RecommendationsView> {
    Ok(Json(engine.recommend(&id)?))
}

async fn details(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<crate::engine::DetailsView> {
    Ok(Json(engine.details(&id)?))
}

async fn select(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<crate::engine::TransitionView> {
    Ok(Json(engine.select(&id)?))
}

async fn complete(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<crate::engine::TransitionView> {
    Ok(Json(engine.complete(&id)?))
}

async fn rate(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    body: Result<Json<RatingInput>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<crate::engine::RatingView> {
    let Json(input) = body.map_err(|e| bad_request(e.body_text()))?;
    Ok(Json(engine.rate(&id, &input)?))
}

#[derive(Deserialize)]
struct TopQuery {
    n: Option<usize>,
}

async fn top_carriers(
    State(engine): State<Arc<Engine>>,
    Path(leg_id): Path<String>,
    Query(q): Query<TopQuery>,
) -> ApiResult<crate::engine::TopCarriersView> {
    Ok(Json(engine.top_carriers(&leg_id, q.n.unwrap_or(10))?))
}

async fn compare(
    State(engine): State<Arc<Engine>>,
    Path((leg_id, carrier_id)): Path<(String, String)>,
) -> ApiResult<crate::engine::CompareView> {
    Ok(Json(engine.compare(&leg_id, &carrier_id)?))
}

async fn import_ratings(State(engine): State<Arc<Engine>>, body: Bytes) -> ApiResult<serde_json::Value> {
    let imported = engine.import_ratings(body.as_ref())?;
    Ok(Json(json!({ "imported": imported })))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct MineBody {
    min_support: Option<f64>,
    min_confidence: Option<f64>,
}

async fn mine(State(engine): State<Arc<Engine>>, body: Bytes) -> ApiResult<crate::engine::RulesView> {
    let params: MineBody = if body.iter().all(u8::is_ascii_whitespace) {
        MineBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?
    };
    let defaults = MiningThresholds::default();
    let thresholds = MiningThresholds::new(
        params.min_support.unwrap_or(defaults.min_support),
        params.min_confidence.unwrap_or(defaults.min_confidence),
    )
    .map_err(|e| ApiError(e.into()))?;
    Ok(Json(engine.mine_rules(thresholds)?))
}

async fn rules(State(engine): State<Arc<Engine>>) -> Json<crate::engine::RulesView> {
    Json(engine.rules_view())
}
