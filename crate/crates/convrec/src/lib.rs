//! HTTP front end for the recommender service.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use convrec_core::profile::ProfileFact;
use convrec_core::record::SessionRecord;
use convrec_core::service::{Service, ServiceError};
use convrec_core::simulator::CrsReply;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            e if e.is_client_error() => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct OpenRequest {
    #[serde(default)]
    pub user_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Opened {
    pub session_id: String,
}

#[derive(Debug, Deserialize)]
pub struct MessageRequest {
    #[serde(default)]
    pub user_id: Option<String>,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProfileBody {
    pub facts: Vec<String>,
}

#[derive(Debug, Serialize)]
struct ProfileView {
    user_id: String,
    facts: Vec<ProfileFact>,
}

type Shared = Arc<Service>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(ServiceError::Setup(format!("worker failed: {e}")))),
    }
}

async fn open_session(
    State(svc): State<Shared>,
    body: Option<Json<OpenRequest>>,
) -> Result<impl IntoResponse, ApiError> {
    let user = body.and_then(|Json(b)| b.user_id);
    let id = blocking(move || svc.create_session(user.as_deref())).await?;
    Ok((StatusCode::CREATED, Json(Opened { session_id: id })))
}

async fn post_message(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<MessageRequest>,
) -> Result<Json<CrsReply>, ApiError> {
    let reply =
        blocking(move || svc.handle_user_message(&id, body.user_id.as_deref(), &body.text)).await?;
    Ok(Json(reply))
}

async fn get_session(
    State(svc): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<SessionRecord>, ApiError> {
    svc.session(&id)
        .map(Json)
        .ok_or(ApiError(ServiceError::NotFound(id)))
}

async fn get_profile(
    State(svc): State<Shared>,
    Path(user): Path<String>,
) -> Result<Json<ProfileView>, ApiError> {
    let facts = svc.profile(&user)?;
    Ok(Json(ProfileView {
        user_id: user,
        facts,
    }))
}

async fn put_profile(
    State(svc): State<Shared>,
    Path(user): Path<String>,
    Json(body): Json<ProfileBody>,
) -> Result<Json<ProfileView>, ApiError> {
    let u = user.clone();
    let facts = blocking(move || svc.replace_profile(&u, &body.facts)).await?;
    Ok(Json(ProfileView {
        user_id: user,
        facts,
    }))
}

async fn healthz(State(svc): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "config_hash": svc.config_hash(),
        "items": svc.corpus().len(),
        "backend": svc.gateway().backend_id(),
    }))
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/users/{id}/profile", get(get_profile).put(put_profile))
        .route("/healthz", get(healthz))
        .with_state(service)
}
