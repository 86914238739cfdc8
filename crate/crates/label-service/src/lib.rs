//! HTTP backend for two-view keypoint labeling.
//!
//! Sequences live in subdirectories of a data root, one directory per
//! sequence id. A session opens a sequence on its most orthogonal frame
//! pair, triangulates clicked keypoints, reports reprojection residuals and
//! backprojections, and appends committed objects to the sequence's labels
//! file. The first session opened on a sequence is its writer; later
//! sessions on the same sequence are read-only until the writer closes.

pub mod protocol;
pub mod render;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use kptk_core::dataset::{Camera, DatasetError};
use log::info;
use serde::de::DeserializeOwned;

use crate::protocol::*;
use crate::session::{ServiceError, Session};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) | ServiceError::UnsupportedVersion(_) => StatusCode::BAD_REQUEST,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::MismatchedClicks { .. } | ServiceError::Triangulation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Dataset(DatasetError::Io { .. }) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Dataset(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let keypoints = match &self {
            ServiceError::Triangulation { keypoints, .. } => Some(keypoints.clone()),
            _ => None,
        };
        let body = ErrorResponse { version: PROTOCOL_VERSION, error: ErrorBody { kind: self.kind().into(), message: self.to_string() }, keypoints };
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<Mutex<Session>>;

/// Open sessions and the writer of each sequence.
#[derive(Debug)]
pub struct AppState {
    root: PathBuf,
    next_id: AtomicU64,
    sessions: Mutex<HashMap<u64, Shared>>,
    writers: Mutex<HashMap<String, u64>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    pub fn new(root: PathBuf) -> Self {
        Self { root, next_id: AtomicU64::new(1), sessions: Mutex::default(), writers: Mutex::default() }
    }

    fn session(&self, id: u64) -> Result<Shared, ServiceError> {
        lock(&self.sessions).get(&id).cloned().ok_or_else(|| ServiceError::NotFound(format!("no session {id}")))
    }

    fn sequence_dir(&self, id: &str) -> Result<PathBuf, ServiceError> {
        let mut parts = Path::new(id).components();
        match (parts.next(), parts.next()) {
            (Some(Component::Normal(_)), None) => {}
            _ => return Err(ServiceError::BadRequest(format!("invalid sequence id '{id}'"))),
        }
        let dir = self.root.join(id);
        if dir.join("sequence.toml").is_file() {
            Ok(dir)
        } else {
            Err(ServiceError::NotFound(format!("no sequence '{id}'")))
        }
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))
}

fn check_version(version: u32) -> Result<(), ServiceError> {
    if version == PROTOCOL_VERSION {
        Ok(())
    } else {
        Err(ServiceError::UnsupportedVersion(version))
    }
}

async fn open(State(state): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<OpenResponse>), ServiceError> {
    let req: OpenRequest = parse(&body)?;
    check_version(req.version)?;
    let dir = state.sequence_dir(&req.sequence)?;
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let writable = {
        let mut writers = lock(&state.writers);
        let free = !writers.contains_key(&req.sequence);
        if free {
            writers.insert(req.sequence.clone(), id);
        }
        free
    };
    let session = match Session::open(id, &dir, &req.categories, writable) {
        Ok(s) => s,
        Err(e) => {
            if writable {
                lock(&state.writers).remove(&req.sequence);
            }
            return Err(e);
        }
    };
    let seq = session.sequence();
    let pair = session.pair();
    let resp = OpenResponse {
        version: PROTOCOL_VERSION,
        session: id,
        sequence: seq.id.clone(),
        writable,
        frame_count: seq.frames.len(),
        intrinsics: RigIntrinsics { left: seq.intrinsics(Camera::Left).into(), right: seq.intrinsics(Camera::Right).into() },
        categories: seq.categories.clone(),
        committed: session.committed(),
        pair,
        poses: [session.frame_poses(pair.a), session.frame_poses(pair.b)],
    };
    info!("session {id} opened on '{}' (writable: {writable})", req.sequence);
    lock(&state.sessions).insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(resp)))
}

async fn close(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> Result<StatusCode, ServiceError> {
    let session = lock(&state.sessions).remove(&id).ok_or_else(|| ServiceError::NotFound(format!("no session {id}")))?;
    let seq_id = lock(&session).sequence().id.clone();
    let mut writers = lock(&state.writers);
    if writers.get(&seq_id) == Some(&id) {
        writers.remove(&seq_id);
    }
    Ok(StatusCode::NO_CONTENT)
}

async fn swap(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>, body: Bytes) -> Result<Json<PairResponse>, ServiceError> {
    let req: SwapRequest = parse(&body)?;
    check_version(req.version)?;
    let session = state.session(id)?;
    let mut s = lock(&session);
    let warning = s.swap(req.slot);
    Ok(Json(s.pair_response(warning)))
}

async fn submit(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>, body: Bytes) -> Result<Json<SubmitResponse>, ServiceError> {
    let req: SubmitRequest = parse(&body)?;
    check_version(req.version)?;
    let session = state.session(id)?;
    let resp = lock(&session).submit(&req)?;
    Ok(Json(resp))
}

async fn commit(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>, body: Bytes) -> Result<Json<CommitResponse>, ServiceError> {
    let req: CommitRequest = parse(&body)?;
    check_version(req.version)?;
    let session = state.session(id)?;
    let (committed, c) = lock(&session).commit()?;
    Ok(Json(CommitResponse { version: PROTOCOL_VERSION, committed, center: [c.x, c.y, c.z] }))
}

async fn backproject(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>, body: Bytes) -> Result<Json<BackprojectResponse>, ServiceError> {
    let req: BackprojectRequest = parse(&body)?;
    check_version(req.version)?;
    let session = state.session(id)?;
    let backprojections = lock(&session).backproject(&req.frames, req.object)?;
    Ok(Json(BackprojectResponse { version: PROTOCOL_VERSION, backprojections }))
}

async fn frames(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> Result<Json<FramesResponse>, ServiceError> {
    let session = state.session(id)?;
    let s = lock(&session);
    let frames = s.sequence().frames.iter().enumerate().map(|(index, f)| FrameInfo { index, timestamp: f.timestamp }).collect();
    Ok(Json(FramesResponse { version: PROTOCOL_VERSION, frames }))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn frame_image(State(state): State<Arc<AppState>>, UrlPath((id, frame, camera)): UrlPath<(u64, usize, String)>) -> Result<Response, ServiceError> {
    let camera = match camera.as_str() {
        "left" => Camera::Left,
        "right" => Camera::Right,
        other => return Err(ServiceError::BadRequest(format!("unknown camera '{other}'"))),
    };
    let session = state.session(id)?;
    let (stored, k, pose) = {
        let s = lock(&session);
        let seq = s.sequence();
        let f = seq.frames.get(frame).ok_or_else(|| ServiceError::NotFound(format!("frame {frame} out of range (sequence has {})", seq.frames.len())))?;
        let image = match camera {
            Camera::Left => f.left_image.clone(),
            Camera::Right => f.right_image.clone(),
        };
        (image.map(|p| state.root.join(&seq.id).join(p)), *seq.intrinsics(camera), *f.pose(camera))
    };
    if let Some(path) = stored {
        let bytes = tokio::fs::read(&path).await.map_err(|e| ServiceError::Dataset(DatasetError::Io { path: path.display().to_string(), source: e }))?;
        return Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response());
    }
    let png = tokio::task::spawn_blocking(move || render::placeholder_png(&k, &pose))
        .await
        .map_err(|e| ServiceError::BadRequest(format!("rendering failed: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

pub fn router(root: PathBuf) -> Router {
    Router::new()
        .route("/v1/sessions", post(open))
        .route("/v1/sessions/{id}", delete(close))
        .route("/v1/sessions/{id}/swap", post(swap))
        .route("/v1/sessions/{id}/submit", post(submit))
        .route("/v1/sessions/{id}/commit", post(commit))
        .route("/v1/sessions/{id}/backproject", post(backproject))
        .route("/v1/sessions/{id}/frames", get(frames))
        .route("/v1/sessions/{id}/frames/{frame}/{camera}", get(frame_image))
        .with_state(Arc::new(AppState::new(root)))
}

/// Serves sequences under `root` on an already bound listener.
pub async fn serve(listener: tokio::net::TcpListener, root: PathBuf) -> std::io::Result<()> {
    info!("label service on {} serving {}", listener.local_addr()?, root.display());
    axum::serve(listener, router(root)).await
}

/// Blocking entry point: binds `addr` and serves until the process exits.
pub fn run(addr: SocketAddr, root: PathBuf) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        serve(listener, root).await
    })
}
