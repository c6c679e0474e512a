//! Axum routes over [`ScreeningService`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use memscreen_core::image::MAX_IMAGE_BYTES;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::error::ApiError;
use crate::service::ScreeningService;

type Shared = State<Arc<ScreeningService>>;

/// Room for a base64-encoded image at the size cap plus JSON framing.
const BODY_LIMIT: usize = MAX_IMAGE_BYTES / 3 * 4 + 64 * 1024;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn create(State(s): Shared, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let r = blocking(move || s.create_session(&body)).await?;
    Ok((StatusCode::CREATED, Json(r)))
}

async fn view(State(s): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || s.view(&id)).await?))
}

async fn event(State(s): Shared, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || s.post_event(&id, &body)).await?))
}

async fn health(State(s): Shared, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || s.submit_health(&id, &body)).await?))
}

async fn face(State(s): Shared, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || s.submit_face(&id, &body)).await?))
}

async fn decision(State(s): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || s.decision(&id)).await?))
}

async fn event_log(State(s): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let csv = blocking(move || s.log_csv(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv))
}

async fn healthz(State(s): Shared) -> impl IntoResponse {
    Json(s.healthz())
}

pub fn router(service: Arc<ScreeningService>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/healthz", get(healthz))
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}", get(view))
        .route("/api/sessions/{id}/events", post(event))
        .route("/api/sessions/{id}/health", post(health))
        .route("/api/sessions/{id}/face", post(face))
        .route("/api/sessions/{id}/decision", get(decision))
        .route("/api/sessions/{id}/log", get(event_log))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process ends, sweeping idle sessions once a minute.
pub async fn serve(listener: TcpListener, service: Arc<ScreeningService>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let sweeper = Arc::clone(&service);
    tokio::spawn(async move {
        let mut every = tokio::time::interval(Duration::from_secs(60));
        loop {
            every.tick().await;
            let s = Arc::clone(&sweeper);
            if let Ok(n) = tokio::task::spawn_blocking(move || s.sweep()).await {
                if n > 0 {
                    log::info!("expired {n} idle sessions");
                }
            }
        }
    });
    axum::serve(listener, router(service, static_dir)).await
}

/// Binds `addr` and serves in a background task; returns the bound address.
pub async fn spawn(addr: SocketAddr, service: Arc<ScreeningService>, static_dir: Option<PathBuf>) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener, service, static_dir).await {
            log::error!("server stopped: {e}");
        }
    });
    Ok(local)
}
