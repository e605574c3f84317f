//! HTTP+JSON API, all routes under `/v1`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fastfashion_core::feedback::RaterKind;
use fastfashion_core::{DesignRecord, Rating};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::artifacts::content_type;
use crate::error::{ServiceError, ServiceResult};
use crate::schemas;
use crate::service::{EnhanceRequest, JobRequest, Service, TrendQuery};

/// Uploads and corpora can be large; 64 MiB is plenty for 2400x2400 PNGs.
const BODY_LIMIT: usize = 64 << 20;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{}: {self}", self.kind());
        }
        (status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

/// Parses a JSON body, reporting problems as a 422 on field `body`.
fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> ServiceResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return serde_json::from_slice(b"{}").map_err(|e| ServiceError::field("body", e.to_string()));
    }
    serde_json::from_slice(bytes).map_err(|e| ServiceError::field("body", e.to_string()))
}

fn bad_query(e: QueryRejection) -> ServiceError {
    ServiceError::BadRequest(e.body_text())
}

/// Runs blocking service work off the async executor.
async fn blocking<T, F>(service: &Arc<Service>, f: F) -> ServiceResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> ServiceResult<T> + Send + 'static,
{
    let service = Arc::clone(service);
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ServiceError::Unavailable(format!("worker task failed: {e}")))?
}

pub fn router(service: Arc<Service>) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/jobs", post(submit_job).get(list_jobs))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/enhance", post(enhance))
        .route("/images", post(upload_image))
        .route("/assets/{id}", get(asset))
        .route("/corpora", post(ingest_corpus))
        .route("/trends", get(trends))
        .route("/designs", post(register_design).get(list_designs))
        .route("/ratings", post(submit_rating))
        .route("/evaluation/segregation", get(segregation))
        .route("/schemas/{name}", get(schema))
        .with_state(service);
    Router::new()
        .nest("/v1", v1)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
}

async fn health(State(s): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "workers": s.queue().capacity(),
        "superres_available": s.has_superres(),
    }))
}

async fn submit_job(State(s): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let request: JobRequest = parse_body(&body)?;
    let job_id = s.submit_job(request)?;
    let snapshot = s.job(&job_id)?;
    Ok((StatusCode::ACCEPTED, Json(snapshot)))
}

async fn list_jobs(State(s): State<Arc<Service>>) -> impl IntoResponse {
    Json(json!({ "jobs": s.jobs() }))
}

async fn job_status(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.job(&id)?))
}

async fn enhance(State(s): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let request: EnhanceRequest = parse_body(&body)?;
    let result = blocking(&s, move |s| s.enhance(&id, request)).await?;
    Ok(Json(result))
}

async fn upload_image(State(s): State<Arc<Service>>, mut form: Multipart) -> ApiResult<impl IntoResponse> {
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ServiceError::BadRequest(e.body_text()))?
    {
        if field.name() == Some("file") {
            let bytes = field.bytes().await.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
            let upload = blocking(&s, move |s| s.upload_image(&bytes)).await?;
            return Ok((StatusCode::CREATED, Json(upload)));
        }
    }
    Err(ServiceError::field("file", "multipart field `file` is required"))
}

async fn asset(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let bytes = s.artifacts().read(&id)?;
    Ok(([(header::CONTENT_TYPE, content_type(&id))], bytes))
}

async fn ingest_corpus(State(s): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let info = blocking(&s, move |s| s.ingest_corpus(&body, None)).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

#[derive(Debug, Deserialize)]
struct TrendParams {
    corpus: Option<String>,
    #[serde(default)]
    seed: u64,
    k: Option<usize>,
    bin_days: Option<i64>,
}

async fn trends(State(s): State<Arc<Service>>, q: Result<Query<TrendParams>, QueryRejection>) -> ApiResult<impl IntoResponse> {
    let Query(q) = q.map_err(bad_query)?;
    let query = TrendQuery { seed: q.seed, k: q.k, bin_days: q.bin_days };
    let report = blocking(&s, move |s| s.trends(q.corpus.as_deref(), &query)).await?;
    Ok(Json(report.as_ref().clone()))
}

async fn register_design(State(s): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let design: DesignRecord = parse_body(&body)?;
    let design = blocking(&s, move |s| s.register_design(design)).await?;
    Ok((StatusCode::CREATED, Json(design)))
}

async fn list_designs(State(s): State<Arc<Service>>) -> ApiResult<impl IntoResponse> {
    let designs = blocking(&s, |s| Ok(s.feedback().designs()?)).await?;
    Ok(Json(json!({ "designs": designs })))
}

async fn submit_rating(State(s): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let rating: Rating = parse_body(&body)?;
    let rating = blocking(&s, move |s| s.submit_rating(rating)).await?;
    Ok((StatusCode::CREATED, Json(rating)))
}

#[derive(Debug, Deserialize)]
struct SegregationParams {
    rater_kind: Option<RaterKind>,
}

async fn segregation(State(s): State<Arc<Service>>, q: Result<Query<SegregationParams>, QueryRejection>) -> ApiResult<impl IntoResponse> {
    let Query(q) = q.map_err(bad_query)?;
    let kind = q.rater_kind.unwrap_or(RaterKind::Designer);
    Ok(Json(blocking(&s, move |s| s.segregation(kind)).await?))
}

async fn schema(Path(name): Path<String>) -> ApiResult<impl IntoResponse> {
    let text = schemas::get(name.trim_end_matches(".json"))
        .ok_or_else(|| ServiceError::NotFound(format!("schema `{name}`")))?;
    Ok(([(header::CONTENT_TYPE, "application/schema+json")], text))
}
