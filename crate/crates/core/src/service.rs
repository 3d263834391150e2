//! Session HTTP API for the interactive editor.
//!
//! Bodies are JSON. Vectors are arrays (`[x, y, z]`), poses use the same
//! record as dataset annotations, joints and parts use their snake_case
//! names. Every mutating request may carry `revision`; when present it must
//! equal the session's current revision or the call fails with 409.
//!
//! | route | body | reply |
//! |---|---|---|
//! | `POST /session` | none | `{id, revision, pose}` |
//! | `POST /session/{id}/sketch` | `{strokes: [[[x, y], ...], ...], revision?}` | [`SketchReply`] |
//! | `POST /session/{id}/fk` | `{joint, rotation, revision?}` | [`PoseReply`] |
//! | `POST /session/{id}/ik` | [`IkRequest`] fields plus `revision?` | [`IkReply`] |
//! | `GET /session/{id}/pose` | | [`PoseReply`] |
//! | `GET /session/{id}/export` | | [`ExportReply`] |
//! | `GET /healthz` | | `{status: "ok"}` |
//!
//! Errors reply `{error: "..."}` with 404 for unknown sessions, 409 for
//! stale revisions and 422 for sketches or requests the engine rejects.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex as StdMutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::body_model::{fit_primitives, JointId, PartLabel, Pose, PrimitiveBody, SkeletonTemplate};
use crate::camera::Camera;
use crate::interpret::{interpret_sketch, RawStroke};
use crate::kinematics::{set_joint_rotation, solve_ik, IkRequest};
use crate::lift::{lift, Joints2D, LiftConfig};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    NotFound(String),
    #[error("stale revision {given}, session is at {current}")]
    Stale { given: u64, current: u64 },
    #[error("{0}")]
    Unprocessable(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Stale { .. } => StatusCode::CONFLICT,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(ErrorReply { error: self.to_string() })).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub template: &'static SkeletonTemplate,
    pub camera: Camera,
    pub lift: LiftConfig,
    /// Appends every mutating request as one JSON line, for replay.
    pub request_log: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            template: SkeletonTemplate::canonical(),
            camera: Camera::default(),
            lift: LiftConfig::default(),
            request_log: None,
        }
    }
}

#[derive(Debug, Clone)]
struct Session {
    pose: Pose,
    revision: u64,
    last_sketch: Option<Vec<RawStroke>>,
    last_interpretation: Option<Joints2D>,
}

struct AppState {
    config: ServiceConfig,
    next_id: AtomicU64,
    sessions: StdMutex<HashMap<String, Arc<Mutex<Session>>>>,
    log: Option<StdMutex<std::fs::File>>,
}

type Shared = Arc<AppState>;

impl AppState {
    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        let map = self.sessions.lock().map_err(|e| ServiceError::Internal(e.to_string()))?;
        map.get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn record(&self, method: &str, path: &str, body: &serde_json::Value) {
        let Some(log) = &self.log else { return };
        let line = serde_json::json!({ "method": method, "path": path, "body": body });
        if let Ok(mut f) = log.lock() {
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("request log: {e}");
            }
        }
    }
}

fn check_revision(session: &Session, given: Option<u64>) -> Result<(), ServiceError> {
    match given {
        Some(g) if g != session.revision => Err(ServiceError::Stale { given: g, current: session.revision }),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseReply {
    pub id: String,
    pub revision: u64,
    pub pose: Pose,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchRequest {
    pub strokes: Vec<RawStroke>,
    #[serde(default)]
    pub revision: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiftDiagnostics {
    pub objective: f64,
    pub converged: bool,
    pub starts_evaluated: usize,
    pub best_start: usize,
    /// Mean reprojection error over confident joints, pixels.
    pub mean_reprojection_px: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchReply {
    pub id: String,
    pub revision: u64,
    pub pose: Pose,
    pub joints2d: Joints2D,
    pub body: PrimitiveBody,
    /// Part per input stroke, `null` when unassigned.
    pub labels: Vec<Option<PartLabel>>,
    pub diagnostics: LiftDiagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FkRequest {
    pub joint: JointId,
    pub rotation: Vector3<f64>,
    #[serde(default)]
    pub revision: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IkCall {
    #[serde(flatten)]
    pub request: IkRequest,
    #[serde(default)]
    pub revision: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IkReply {
    pub id: String,
    pub revision: u64,
    pub pose: Pose,
    /// Final effector distance to the target, meters.
    pub error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub template: String,
    pub camera: Camera,
    pub revision: u64,
    /// Whether the pose came from a sketch (as opposed to rest or edits only).
    pub from_sketch: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportReply {
    pub id: String,
    pub revision: u64,
    pub pose: Pose,
    pub body: PrimitiveBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints2d: Option<Joints2D>,
    pub provenance: Provenance,
}

/// Builds the router. Opening the request log is the only fallible step.
pub fn router(config: ServiceConfig) -> std::io::Result<Router> {
    let log = match &config.request_log {
        Some(p) => Some(StdMutex::new(std::fs::OpenOptions::new().create(true).append(true).open(p)?)),
        None => None,
    };
    let state: Shared =
        Arc::new(AppState { config, next_id: AtomicU64::new(1), sessions: StdMutex::new(HashMap::new()), log });
    Ok(Router::new()
        .route("/healthz", get(healthz))
        .route("/session", post(create_session))
        .route("/session/{id}/sketch", post(post_sketch))
        .route("/session/{id}/fk", post(post_fk))
        .route("/session/{id}/ik", post(post_ik))
        .route("/session/{id}/pose", get(get_pose))
        .route("/session/{id}/export", get(get_export))
        .with_state(state))
}

pub async fn serve(config: ServiceConfig, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let app = router(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(State(st): State<Shared>) -> Result<(StatusCode, Json<PoseReply>), ServiceError> {
    // Sequential ids keep replays against a fresh server identical.
    let id = format!("s{}", st.next_id.fetch_add(1, Ordering::Relaxed));
    let session = Session {
        pose: Pose::standing(st.config.template),
        revision: 0,
        last_sketch: None,
        last_interpretation: None,
    };
    let reply = PoseReply { id: id.clone(), revision: 0, pose: session.pose.clone() };
    st.sessions
        .lock()
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .insert(id, Arc::new(Mutex::new(session)));
    st.record("POST", "/session", &serde_json::Value::Null);
    Ok((StatusCode::CREATED, Json(reply)))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Internal(e.to_string()))
}

async fn post_sketch(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<SketchRequest>,
) -> Result<Json<SketchReply>, ServiceError> {
    let session = st.session(&id)?;
    // Holding the session lock across the engine call serializes mutations.
    let mut s = session.lock().await;
    check_revision(&s, req.revision)?;
    st.record("POST", &format!("/session/{id}/sketch"), &serde_json::to_value(&req).unwrap_or_default());
    let (template, camera, config) = (st.config.template, st.config.camera.clone(), st.config.lift.clone());
    let strokes = req.strokes;
    let seed = s.revision + 1;
    let (strokes, outcome) = blocking(move || {
        let out = interpret_sketch(&strokes, template, &camera)
            .map_err(|e| ServiceError::Unprocessable(format!("uninterpretable sketch: {e}")))
            .and_then(|it| {
                let lifted = lift(&it.joints, template, &camera, &config, seed)
                    .map_err(|e| ServiceError::Unprocessable(format!("cannot lift sketch: {e}")))?;
                let body = fit_primitives(template, &lifted.pose).map_err(|e| ServiceError::Internal(e.to_string()))?;
                Ok((it, lifted, body))
            });
        (strokes, out)
    })
    .await?;
    let (it, lifted, body) = outcome?;
    s.revision += 1;
    s.pose = lifted.pose.clone();
    s.last_sketch = Some(strokes);
    s.last_interpretation = Some(it.joints.clone());
    let diagnostics = LiftDiagnostics {
        objective: lifted.objective,
        converged: lifted.converged,
        starts_evaluated: lifted.starts_evaluated,
        best_start: lifted.best_start,
        mean_reprojection_px: lifted.mean_confident_error(&it.joints),
        elapsed_ms: lifted.elapsed_ms,
    };
    Ok(Json(SketchReply {
        id,
        revision: s.revision,
        pose: lifted.pose,
        joints2d: it.joints,
        body,
        labels: it.labels,
        diagnostics,
    }))
}

async fn post_fk(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<FkRequest>,
) -> Result<Json<PoseReply>, ServiceError> {
    let session = st.session(&id)?;
    let mut s = session.lock().await;
    check_revision(&s, req.revision)?;
    if st.config.template.parent(req.joint).is_none() {
        return Err(ServiceError::Unprocessable(format!("`{}` is the root and has no local rotation", req.joint)));
    }
    if !req.rotation.iter().all(|v| v.is_finite()) {
        return Err(ServiceError::Unprocessable("rotation must be finite".into()));
    }
    st.record("POST", &format!("/session/{id}/fk"), &serde_json::to_value(&req).unwrap_or_default());
    s.pose = set_joint_rotation(&s.pose, req.joint, req.rotation, st.config.template);
    s.revision += 1;
    Ok(Json(PoseReply { id, revision: s.revision, pose: s.pose.clone() }))
}

async fn post_ik(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Json(call): Json<IkCall>,
) -> Result<Json<IkReply>, ServiceError> {
    let session = st.session(&id)?;
    let mut s = session.lock().await;
    check_revision(&s, call.revision)?;
    st.record("POST", &format!("/session/{id}/ik"), &serde_json::to_value(&call).unwrap_or_default());
    let (pose, template, request) = (s.pose.clone(), st.config.template, call.request);
    let result = blocking(move || solve_ik(&pose, &request, template))
        .await?
        .map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
    s.pose = result.pose.clone();
    s.revision += 1;
    Ok(Json(IkReply { id, revision: s.revision, pose: result.pose, error: result.error, converged: result.converged }))
}

async fn get_pose(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<PoseReply>, ServiceError> {
    let session = st.session(&id)?;
    let s = session.lock().await;
    Ok(Json(PoseReply { id, revision: s.revision, pose: s.pose.clone() }))
}

async fn get_export(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<ExportReply>, ServiceError> {
    let session = st.session(&id)?;
    let s = session.lock().await;
    let body = fit_primitives(st.config.template, &s.pose).map_err(|e| ServiceError::Internal(e.to_string()))?;
    Ok(Json(ExportReply {
        id,
        revision: s.revision,
        pose: s.pose.clone(),
        body,
        joints2d: s.last_interpretation.clone(),
        provenance: Provenance {
            generator: concat!("sketchpose ", env!("CARGO_PKG_VERSION")).to_string(),
            template: st.config.template.name.clone(),
            camera: st.config.camera.clone(),
            revision: s.revision,
            from_sketch: s.last_sketch.is_some(),
        },
    }))
}
