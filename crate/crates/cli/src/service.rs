//! Local HTTP service for recording demonstrations. Every step is simulated
//! here, so recorded demos match the planner's dynamics exactly.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use pushcraft::demo::{load_demo, save_demo, Demonstration};
use pushcraft::dynamics::{
    classify_mode, step, ContactFace, ControlInput, ControlVector, InteractionMode, PhysicalParams, SystemState,
};
use pushcraft::planner::initial_state;

/// Longest recording a session accepts (~1.4 h at 20 Hz).
pub const MAX_SESSION_STEPS: usize = 100_000;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no {what} with id {id}"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// One recording in progress.
#[derive(Debug, Clone)]
pub struct Session {
    pub params: PhysicalParams,
    pub face: ContactFace,
    pub states: Vec<SystemState>,
    pub controls: Vec<ControlInput>,
    pub faces: Vec<ContactFace>,
}

impl Session {
    fn new(params: PhysicalParams, face: ContactFace) -> Self {
        Self {
            params,
            face,
            states: vec![initial_state(face, &params)],
            controls: Vec::new(),
            faces: Vec::new(),
        }
    }

    fn current(&self) -> &SystemState {
        self.states.last().expect("sessions always hold a state")
    }

    fn mode(&self) -> InteractionMode {
        classify_mode(self.current(), self.face, &self.params)
    }

    /// Holds `v_cmd` for one tick: the control is the velocity change needed
    /// to reach it, `u = (v_cmd - v) / dt`.
    fn step(&mut self, v_cmd: [f64; 2]) -> ApiResult<()> {
        if !v_cmd.iter().all(|v| v.is_finite()) {
            return Err(ApiError::bad_request("v_cmd must be finite"));
        }
        if self.controls.len() >= MAX_SESSION_STEPS {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "session_full",
                format!("sessions are limited to {MAX_SESSION_STEPS} steps"),
            ));
        }
        let state = *self.current();
        let u = ControlInput((ControlVector::new(v_cmd[0], v_cmd[1]) - state.velocity) / self.params.dt);
        let (next, _) = step(&state, &u, self.face, &self.params)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        if !next.is_finite() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "non_finite",
                "step produced a non-finite state",
            ));
        }
        self.states.push(next);
        self.controls.push(u);
        self.faces.push(self.face);
        Ok(())
    }
}

pub struct AppState {
    demo_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(demo_dir: impl Into<PathBuf>) -> Self {
        Self {
            demo_dir: demo_dir.into(),
            sessions: RwLock::new(HashMap::new()),
        }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", axum::routing::delete(delete_session))
        .route("/session/{id}/step", post(step_session))
        .route("/session/{id}/switch-face", post(switch_face))
        .route("/session/{id}/finish", post(finish_session))
        .route("/demos", get(list_demos))
        .route("/demos/{id}", get(get_demo))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    params: Option<PhysicalParams>,
    face: Option<ContactFace>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub state: [f64; 7],
    pub face: ContactFace,
    pub mode: InteractionMode,
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<SessionCreated>> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        parse(&body)?
    };
    let params = req.params.unwrap_or_default();
    params
        .validate()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_params", e.to_string()))?;
    let session = Session::new(params, req.face.unwrap_or(ContactFace::Left));
    let id = uuid::Uuid::new_v4().simple().to_string();
    let out = SessionCreated {
        id: id.clone(),
        state: session.current().to_array(),
        face: session.face,
        mode: session.mode(),
    };
    app.sessions
        .write()
        .expect("session map poisoned")
        .insert(id, Arc::new(Mutex::new(session)));
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRequest {
    v_cmd: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepResponse {
    pub state: [f64; 7],
    /// Mode of the returned state; face switches are allowed iff Separation.
    pub mode: InteractionMode,
    pub face: ContactFace,
    pub steps: usize,
}

async fn step_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<StepResponse>> {
    let req: StepRequest = parse(&body)?;
    let session = app.session(&id)?;
    let mut s = session.lock().expect("session poisoned");
    s.step(req.v_cmd)?;
    Ok(Json(StepResponse {
        state: s.current().to_array(),
        mode: s.mode(),
        face: s.face,
        steps: s.controls.len(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SwitchRequest {
    face: ContactFace,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SwitchResponse {
    pub state: [f64; 7],
    pub face: ContactFace,
}

async fn switch_face(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SwitchResponse>> {
    let req: SwitchRequest = parse(&body)?;
    let session = app.session(&id)?;
    let mut s = session.lock().expect("session poisoned");
    let mode = s.mode();
    if mode != InteractionMode::Separation {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "in_contact",
            format!("break contact before switching faces (current mode: {mode})"),
        ));
    }
    s.face = req.face;
    Ok(Json(SwitchResponse { state: s.current().to_array(), face: s.face }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FinishRequest {
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FinishResponse {
    pub demo_id: String,
}

fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .take(40)
        .collect();
    if s.is_empty() {
        "demo".into()
    } else {
        s
    }
}

async fn finish_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<FinishResponse>> {
    let req: FinishRequest = parse(&body)?;
    let session = app.session(&id)?;
    let demo = {
        let s = session.lock().expect("session poisoned");
        if s.controls.is_empty() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "too_short",
                "a demonstration needs at least one step",
            ));
        }
        Demonstration::from_rollout(s.params.dt, s.states.clone(), s.controls.clone(), s.faces.clone(), req.label.clone())
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_demo", e.to_string()))?
    };
    fs::create_dir_all(&app.demo_dir).map_err(|e| ApiError::internal(e.to_string()))?;
    let demo_id = format!("{}-{}", slug(&req.label), &uuid::Uuid::new_v4().simple().to_string()[..8]);
    save_demo(app.demo_dir.join(format!("{demo_id}.json")), &demo)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    app.sessions.write().expect("session map poisoned").remove(&id);
    Ok(Json(FinishResponse { demo_id }))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    app.sessions
        .write()
        .expect("session map poisoned")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::not_found("session", &id))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DemoSummary {
    pub id: String,
    pub label: String,
    pub reached: [f64; 3],
    pub switch_count: usize,
    pub horizon: usize,
}

/// Demo ids are file stems; anything else could escape the directory.
fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

async fn list_demos(State(app): State<Arc<AppState>>) -> ApiResult<Json<Vec<DemoSummary>>> {
    let entries = match fs::read_dir(&app.demo_dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Json(Vec::new())),
        Err(e) => return Err(ApiError::internal(e.to_string())),
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).filter(|s| valid_id(s)) else {
            continue;
        };
        // unreadable files are skipped rather than failing the listing
        let Ok(demo) = load_demo(&path) else {
            tracing::warn!("skipping unreadable demo {}", path.display());
            continue;
        };
        out.push(DemoSummary {
            id: id.to_string(),
            label: demo.label.clone(),
            reached: demo.reached.to_array(),
            switch_count: demo.switch_count(),
            horizon: demo.horizon(),
        });
    }
    Ok(Json(out))
}

async fn get_demo(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    if !valid_id(&id) {
        return Err(ApiError::not_found("demo", &id));
    }
    let path = app.demo_dir.join(format!("{id}.json"));
    if !path.is_file() {
        return Err(ApiError::not_found("demo", &id));
    }
    let demo = load_demo(&path).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], demo.to_json()).into_response())
}
