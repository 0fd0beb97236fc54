//! HTTP routes. Every body is JSON; spans use the `[start, end, "CODE"]` triple form.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use movekit::classifier::ClassifierError;
use movekit::corpus::AbstractId;
use movekit::review::wire::{AnnotationUpdate, EnqueueRequest, ErrorBody, FinalizeRequest};
use movekit::review::ReviewError;
use movekit::stats::Partition;
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::state::{labels, AppState};

type Shared = Arc<AppState>;

/// An error response: status plus [`ErrorBody`].
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody::new(message),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn unknown(id: &AbstractId) -> Self {
        Self::not_found(format!("unknown abstract {id}"))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn unavailable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let message = e.to_string();
        match e {
            ReviewError::UnknownId(_) => Self::not_found(message),
            ReviewError::Conflict { current, .. } => ApiError {
                status: StatusCode::CONFLICT,
                body: ErrorBody {
                    error: message,
                    current_version: Some(current),
                    violations: Vec::new(),
                },
            },
            ReviewError::WrongState { .. } => Self::conflict(message),
            ReviewError::Validation(violations) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ErrorBody {
                    error: message,
                    current_version: None,
                    violations,
                },
            },
            ReviewError::EmptyAnnotation => Self::new(StatusCode::UNPROCESSABLE_ENTITY, message),
            _ => {
                tracing::error!(error = %message, "review store failure");
                Self::internal(message)
            }
        }
    }
}

impl From<ClassifierError> for ApiError {
    fn from(e: ClassifierError) -> Self {
        Self::internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Runs store or model work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn parse_id(raw: &str) -> AbstractId {
    raw.parse().expect("infallible")
}

#[derive(Debug, Deserialize)]
struct ReviewerQuery {
    reviewer: Option<String>,
}

async fn next_task(
    State(state): State<Shared>,
    Query(q): Query<ReviewerQuery>,
) -> Result<Response, ApiError> {
    let view = blocking(move || state.next_task(q.reviewer.as_deref())).await?;
    Ok(match view {
        Some(v) => Json(v).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn enqueue(
    State(state): State<Shared>,
    Json(req): Json<EnqueueRequest>,
) -> Result<Response, ApiError> {
    let report = blocking(move || state.enqueue(&req.records)).await?;
    Ok((StatusCode::CREATED, Json(report)).into_response())
}

async fn get_abstract(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let id = parse_id(&id);
    Ok(Json(blocking(move || state.view(&id)).await?).into_response())
}

async fn put_annotation(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(update): Json<AnnotationUpdate>,
) -> Result<Response, ApiError> {
    let id = parse_id(&id);
    Ok(Json(blocking(move || state.submit(&id, update)).await?).into_response())
}

async fn finalize(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Option<Json<FinalizeRequest>>,
) -> Result<Response, ApiError> {
    let id = parse_id(&id);
    let reviewer = body.and_then(|Json(b)| b.reviewer);
    Ok(Json(blocking(move || state.finalize(&id, reviewer.as_deref())).await?).into_response())
}

#[derive(Debug, Deserialize)]
struct ConfusionQuery {
    last: Option<usize>,
}

async fn confusion(
    State(state): State<Shared>,
    Query(q): Query<ConfusionQuery>,
) -> Result<Response, ApiError> {
    Ok(Json(blocking(move || Ok(state.confusion(q.last))).await?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct RetrainQuery {
    #[serde(default)]
    wait: bool,
    #[serde(default)]
    force: bool,
}

/// Starts a retraining job. Returns 202 at once, or 200 with the outcome when `wait`.
async fn start_retrain(
    State(state): State<Shared>,
    Query(q): Query<RetrainQuery>,
) -> Result<Response, ApiError> {
    state.begin_retrain(q.force)?;
    let job_state = state.clone();
    let job = tokio::task::spawn_blocking(move || job_state.run_retrain());
    if q.wait {
        job.await
            .map_err(|e| ApiError::internal(format!("retraining worker failed: {e}")))?;
        let status = state.retrain_status();
        let code = if status.last_error.is_some() {
            StatusCode::INTERNAL_SERVER_ERROR
        } else {
            StatusCode::OK
        };
        Ok((code, Json(status)).into_response())
    } else {
        Ok((StatusCode::ACCEPTED, Json(state.retrain_status())).into_response())
    }
}

async fn retrain_status(State(state): State<Shared>) -> Result<Response, ApiError> {
    Ok(Json(blocking(move || Ok(state.retrain_status())).await?).into_response())
}

#[derive(Debug, Deserialize)]
struct StatsQuery {
    partition: Option<String>,
}

async fn stats(
    State(state): State<Shared>,
    Query(q): Query<StatsQuery>,
) -> Result<Response, ApiError> {
    let partition = match q.partition.as_deref() {
        Some(p) => p.parse::<Partition>().map_err(ApiError::bad_request)?,
        None => Partition::None,
    };
    Ok(Json(blocking(move || Ok(state.stats(partition))).await?).into_response())
}

async fn saliency(
    State(state): State<Shared>,
    Path((id, index)): Path<(String, usize)>,
) -> Result<Response, ApiError> {
    let id = parse_id(&id);
    Ok(Json(blocking(move || state.saliency(&id, index)).await?).into_response())
}

async fn label_list() -> Response {
    Json(labels()).into_response()
}

async fn placeholder_index() -> Html<&'static str> {
    Html(
        "<!doctype html><title>movekit review</title>\
         <p>The review UI is not installed. Set <code>ui_dir</code> in the service config \
         to a built UI bundle. The JSON API lives under <code>/api/</code>.</p>",
    )
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/tasks/next", get(next_task))
        .route("/tasks", post(enqueue))
        .route("/abstracts/{id}", get(get_abstract))
        .route("/abstracts/{id}/annotation", put(put_annotation))
        .route("/abstracts/{id}/finalize", post(finalize))
        .route("/reports/confusion", get(confusion))
        .route("/retrain", post(start_retrain).get(retrain_status))
        .route("/stats", get(stats))
        .route("/saliency/{id}/{index}", get(saliency))
        .route("/labels", get(label_list))
        .fallback(api_not_found);
    let app = Router::new().nest("/api", api);
    let app = match state.config().ui_dir.clone() {
        Some(dir) => {
            app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true))
        }
        None => app.route("/", get(placeholder_index)),
    };
    app.with_state(state)
}
