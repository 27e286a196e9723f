use std::sync::Arc;

use axum::body::to_bytes;
use axum::extract::{FromRequestParts, Multipart, Path, Query, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{async_trait, Json, Router};
use copilot_app::views::{DeliveryReport, FeedbackDetail, JobView, QueuePage, RecordSummary, StudentView};
use copilot_app::Service;
use copilot_core::analytics::report::{CompareReport, Factor};
use copilot_core::analytics::AchievementLevel;
use copilot_core::ingest::{AssignmentBundle, BUNDLE_FILES};
use copilot_core::{LifecycleState, PromptVariant, TriageCategory};
use copilot_store::{RecordQuery, SortOrder, DEFAULT_LIMIT};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::openapi;

/// Largest accepted request body (bundle uploads included).
pub const BODY_LIMIT: usize = 16 * 1024 * 1024;

pub struct AppState {
    pub service: Arc<Service>,
    /// Bearer token required on instructor routes when set.
    pub api_token: Option<String>,
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/spec", get(spec))
        .route("/api/assignments", post(upload_assignment).get(list_assignments))
        .route("/api/assignments/:id/jobs", post(start_job))
        .route("/api/jobs/:id", get(job_status))
        .route("/api/feedback", get(list_feedback))
        .route("/api/feedback/:rid", get(feedback_detail))
        .route("/api/feedback/:rid/text", put(edit_text))
        .route("/api/feedback/:rid/approve", post(approve))
        .route("/api/feedback/:rid/regenerate", post(regenerate))
        .route("/api/feedback/:rid/viewed", post(viewed))
        .route("/api/feedback/:rid/flag", post(flag))
        .route("/api/deliveries", post(deliver))
        .route("/api/analytics/compare", get(compare))
        .fallback(no_route)
        .layer(axum::extract::DefaultBodyLimit::max(BODY_LIMIT))
        .layer(middleware::from_fn(envelope))
        .with_state(state)
}

/// Rewrites framework-generated error bodies (plain text or empty) into
/// the [`ApiError`] envelope.
async fn envelope(req: Request, next: Next) -> Response {
    let res = next.run(req).await;
    let status = res.status();
    if status.is_success() || status.is_informational() || status.is_redirection() {
        return res;
    }
    let is_json = res
        .headers()
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    if is_json {
        return res;
    }
    let body = to_bytes(res.into_body(), 64 * 1024).await.unwrap_or_default();
    let text = String::from_utf8_lossy(&body).trim().to_owned();
    let message = if text.is_empty() {
        status.canonical_reason().unwrap_or("error").to_owned()
    } else {
        text
    };
    ApiError::new(status, ApiError::code_for_status(status), message).into_response()
}

async fn no_route() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no_route", "no such route")
}

/// The authenticated instructor, or "anonymous" when no token is configured.
pub struct Principal(pub String);

#[async_trait]
impl FromRequestParts<Shared> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Shared) -> Result<Self, Self::Rejection> {
        let Some(expected) = &state.api_token else {
            return Ok(Principal("anonymous".into()));
        };
        let given = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim);
        match given {
            Some(tok) if constant_time_eq(tok.as_bytes(), expected.as_bytes()) => Ok(Principal("instructor".into())),
            _ => Err(ApiError::unauthorized()),
        }
    }
}

/// Query-string extractor whose rejection is a 422 [`ApiError`].
pub struct Params<T>(pub T);

#[async_trait]
impl<T: for<'de> Deserialize<'de> + Send, S: Send + Sync> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Params(v))
            .map_err(|e| ApiError::invalid(e.body_text()))
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Runs blocking service work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> copilot_app::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

/// Parses an optional JSON body; an empty body means defaults.
fn optional_body<T: for<'de> Deserialize<'de> + Default>(bytes: &[u8]) -> ApiResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::invalid(format!("invalid JSON body: {e}")))
}

fn json_body<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::invalid(format!("invalid JSON body: {e}")))
}

async fn spec() -> Json<Value> {
    Json(openapi::document())
}

async fn list_assignments(State(st): State<Shared>, _p: Principal) -> ApiResult<Json<Value>> {
    let svc = st.service.clone();
    let ids = blocking(move || Ok(svc.store().list_assignments()?)).await?;
    Ok(Json(json!({ "assignments": ids })))
}

async fn upload_assignment(
    State(st): State<Shared>,
    _p: Principal,
    mut multipart: Multipart,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut bundle = AssignmentBundle::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::invalid(e.body_text()))?
    {
        let name = [field.file_name(), field.name()]
            .into_iter()
            .flatten()
            .find(|n| BUNDLE_FILES.contains(n))
            .map(str::to_owned);
        let bytes = field.bytes().await.map_err(|e| ApiError::invalid(e.body_text()))?;
        if let Some(name) = name {
            bundle.insert(&name, bytes.to_vec());
        }
    }
    let svc = st.service.clone();
    let summary = blocking(move || svc.ingest(&bundle)).await?;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::to_value(summary).expect("serializable")),
    ))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct JobRequest {
    variant: Option<PromptVariant>,
    parallelism: Option<usize>,
    student_ids: Option<Vec<String>>,
}

fn spawn_job(service: Arc<Service>, job_id: String) {
    tokio::spawn(async move {
        if let Err(e) = service.run_job(&job_id).await {
            tracing::error!(job = %job_id, error = %e, "job failed");
        }
    });
}

async fn start_job(
    State(st): State<Shared>,
    _p: Principal,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: JobRequest = optional_body(&body)?;
    let svc = st.service.clone();
    let job = blocking(move || {
        let variant = req.variant.unwrap_or(svc.config().variant);
        let parallelism = req.parallelism.unwrap_or(svc.config().parallelism);
        svc.create_job(&id, variant, parallelism, req.student_ids.as_deref())
    })
    .await?;
    spawn_job(st.service.clone(), job.job_id.clone());
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job.job_id, "job": job }))))
}

async fn job_status(State(st): State<Shared>, _p: Principal, Path(id): Path<String>) -> ApiResult<Json<JobView>> {
    let svc = st.service.clone();
    Ok(Json(blocking(move || svc.job_view(&id)).await?))
}

#[derive(Debug, Default, Deserialize)]
struct FeedbackParams {
    assignment_id: Option<String>,
    state: Option<String>,
    triage: Option<String>,
    achievement: Option<String>,
    variant: Option<String>,
    sort: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

impl FeedbackParams {
    fn to_query(&self) -> ApiResult<RecordQuery> {
        fn parse<T>(field: &str, v: &Option<String>, f: impl Fn(&str) -> Option<T>) -> ApiResult<Option<T>> {
            match v.as_deref().filter(|s| !s.is_empty()) {
                None => Ok(None),
                Some(s) => f(s)
                    .map(Some)
                    .ok_or_else(|| ApiError::invalid(format!("invalid {field}: {s:?}"))),
            }
        }
        Ok(RecordQuery {
            assignment_id: self.assignment_id.clone().filter(|s| !s.is_empty()),
            state: parse("state", &self.state, LifecycleState::parse)?,
            triage: parse("triage", &self.triage, TriageCategory::parse)?,
            achievement: parse("achievement", &self.achievement, |s| s.parse::<AchievementLevel>().ok())?,
            variant: parse("variant", &self.variant, |s| s.parse::<PromptVariant>().ok())?,
            sort: parse("sort", &self.sort, SortOrder::parse)?.unwrap_or_default(),
            offset: self.offset.unwrap_or(0),
            limit: self.limit.unwrap_or(DEFAULT_LIMIT),
        })
    }
}

async fn list_feedback(
    State(st): State<Shared>,
    _p: Principal,
    Params(params): Params<FeedbackParams>,
) -> ApiResult<Json<QueuePage>> {
    let q = params.to_query()?;
    let svc = st.service.clone();
    Ok(Json(blocking(move || svc.queue(&q)).await?))
}

async fn feedback_detail(
    State(st): State<Shared>,
    _p: Principal,
    Path(rid): Path<String>,
) -> ApiResult<Json<FeedbackDetail>> {
    let svc = st.service.clone();
    Ok(Json(blocking(move || svc.detail(&rid)).await?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    edited_text: String,
    version: Option<u64>,
}

async fn edit_text(
    State(st): State<Shared>,
    _p: Principal,
    Path(rid): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<Json<FeedbackDetail>> {
    let req: EditRequest = json_body(&body)?;
    let svc = st.service.clone();
    Ok(Json(
        blocking(move || svc.edit_text(&rid, req.version, &req.edited_text)).await?,
    ))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRequest {
    version: Option<u64>,
    note: Option<String>,
}

async fn approve(
    State(st): State<Shared>,
    Principal(actor): Principal,
    Path(rid): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<Json<RecordSummary>> {
    let req: TransitionRequest = optional_body(&body)?;
    let svc = st.service.clone();
    Ok(Json(blocking(move || svc.approve(&rid, req.version, &actor)).await?))
}

async fn regenerate(
    State(st): State<Shared>,
    Principal(actor): Principal,
    Path(rid): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: TransitionRequest = optional_body(&body)?;
    let svc = st.service.clone();
    let (record, job) = blocking(move || svc.regenerate(&rid, req.version, &actor, req.note)).await?;
    spawn_job(st.service.clone(), job.job_id.clone());
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "record": record, "job_id": job.job_id })),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeliveryRequest {
    record_ids: Vec<String>,
}

async fn deliver(
    State(st): State<Shared>,
    Principal(actor): Principal,
    body: axum::body::Bytes,
) -> ApiResult<Json<DeliveryReport>> {
    let req: DeliveryRequest = json_body(&body)?;
    if req.record_ids.is_empty() {
        return Err(ApiError::invalid("record_ids must not be empty"));
    }
    let svc = st.service.clone();
    Ok(Json(blocking(move || svc.deliver(&req.record_ids, &actor)).await?))
}

#[derive(Debug, Default, Deserialize)]
struct CapabilityParams {
    token: Option<String>,
}

/// Student routes take the capability from `?token=` or a bearer header.
fn capability(params: &CapabilityParams, headers: &axum::http::HeaderMap) -> ApiResult<String> {
    params
        .token
        .clone()
        .or_else(|| {
            headers
                .get(AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
                .map(|s| s.trim().to_owned())
        })
        .filter(|t| !t.is_empty())
        .ok_or_else(ApiError::unauthorized)
}

async fn viewed(
    State(st): State<Shared>,
    Path(rid): Path<String>,
    Params(params): Params<CapabilityParams>,
    headers: axum::http::HeaderMap,
) -> ApiResult<Json<StudentView>> {
    let token = capability(&params, &headers)?;
    let svc = st.service.clone();
    Ok(Json(blocking(move || svc.mark_viewed(&rid, &token)).await?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagRequest {
    comment: Option<String>,
}

async fn flag(
    State(st): State<Shared>,
    Path(rid): Path<String>,
    Params(params): Params<CapabilityParams>,
    headers: axum::http::HeaderMap,
    body: axum::body::Bytes,
) -> ApiResult<Json<StudentView>> {
    let token = capability(&params, &headers)?;
    let req: FlagRequest = optional_body(&body)?;
    let svc = st.service.clone();
    Ok(Json(blocking(move || svc.flag(&rid, &token, req.comment)).await?))
}

#[derive(Debug, Default, Deserialize)]
struct CompareParams {
    factor: Option<String>,
    assignment_id: Option<String>,
}

async fn compare(
    State(st): State<Shared>,
    _p: Principal,
    Params(params): Params<CompareParams>,
) -> ApiResult<Json<CompareReport>> {
    let factor: Factor = params
        .factor
        .as_deref()
        .unwrap_or("variant")
        .parse()
        .map_err(ApiError::invalid)?;
    let svc = st.service.clone();
    Ok(Json(
        blocking(move || svc.compare(params.assignment_id.as_deref(), factor)).await?,
    ))
}
