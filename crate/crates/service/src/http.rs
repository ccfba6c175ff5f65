//! Axum routes over a shared [`Store`].

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use trajlab_core::corpus::Assignment;
use trajlab_core::model::{AnnotationLayer, TrajectoryPoint};

use crate::store::{AssignRequest, FinalizeRequest, MarkRequest, ServiceError, Store, Suggestions, TripSummary};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Forbidden(_) => StatusCode::FORBIDDEN,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = State<Arc<Store>>;

#[derive(Deserialize)]
struct LayerQuery {
    author: Option<String>,
}

#[derive(Deserialize)]
struct ProfileQuery {
    profile: Option<String>,
}

async fn list_trips(State(store): Shared) -> Json<Vec<TripSummary>> {
    Json(store.list_trips())
}

async fn trip_points(State(store): Shared, Path(id): Path<String>) -> Result<Json<Vec<TrajectoryPoint>>, ServiceError> {
    Ok(Json(store.trajectory(&id)?.points.clone()))
}

async fn trip_layers(
    State(store): Shared,
    Path(id): Path<String>,
    Query(q): Query<LayerQuery>,
) -> Result<Json<Vec<AnnotationLayer>>, ServiceError> {
    Ok(Json(store.layers(&id, q.author.as_deref())?))
}

async fn record_mark(
    State(store): Shared,
    Path(id): Path<String>,
    Json(req): Json<MarkRequest>,
) -> Result<Json<AnnotationLayer>, ServiceError> {
    Ok(Json(store.record_mark(&id, &req)?))
}

async fn suggestions(
    State(store): Shared,
    Path(id): Path<String>,
    Query(q): Query<ProfileQuery>,
) -> Result<Json<Suggestions>, ServiceError> {
    Ok(Json(store.suggestions(&id, q.profile.as_deref().unwrap_or("strict"))?))
}

async fn assign(State(store): Shared, Json(req): Json<AssignRequest>) -> Result<Json<Vec<Assignment>>, ServiceError> {
    Ok(Json(store.assign(&req)?))
}

async fn finalize(
    State(store): Shared,
    Path(id): Path<String>,
    Json(req): Json<FinalizeRequest>,
) -> Result<Json<AnnotationLayer>, ServiceError> {
    Ok(Json(store.finalize(&id, &req)?))
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/trips", get(list_trips))
        .route("/trips/{id}", get(trip_points))
        .route("/trips/{id}/layers", get(trip_layers))
        .route("/trips/{id}/marks", post(record_mark))
        .route("/trips/{id}/suggestions", get(suggestions))
        .route("/trips/{id}/finalize", post(finalize))
        .route("/assignments", post(assign))
        .with_state(store)
}
