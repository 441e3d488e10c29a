//! Router, shared state and request handlers.

use std::collections::{BTreeMap, HashMap};
use std::path::Path as FsPath;
use std::sync::{Arc, Mutex as StdMutex};

use avn_core::evaluation::BootstrapConfig;
use avn_core::pipeline::{
    aggregate_subject, diagnose_radiograph, radiograph_payload, DiagnosePayload, Models, RadiographPayload,
};
use avn_core::{ImageF32, Stage};
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::cases::CaseLibrary;
use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::leak;
use crate::report::{session_report, study_report, CaseOracle};
use crate::sessions::{Mode, Session, SessionStore};

pub const OPENAPI_YAML: &str = include_str!("../openapi.yaml");

pub struct AppState {
    pub models: Option<Arc<Models>>,
    pub cases: Arc<CaseLibrary>,
    pub sessions: SessionStore,
    pub config: ServiceConfig,
    ai_cache: StdMutex<HashMap<String, Arc<RadiographPayload>>>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    pub fn new(models: Option<Models>, cases: CaseLibrary, sessions: SessionStore, config: ServiceConfig) -> Self {
        Self {
            models: models.map(Arc::new),
            cases: Arc::new(cases),
            sessions,
            config,
            ai_cache: StdMutex::new(HashMap::new()),
        }
    }

    /// Loads models, cases and journals as configured.
    pub fn from_config(config: ServiceConfig) -> Result<Self, String> {
        let models = match &config.model_dir {
            Some(d) => Some(Models::load_dir(d).map_err(|e| format!("loading models from {}: {e}", d.display()))?),
            None => None,
        };
        let cases = match &config.cases_manifest {
            Some(p) => CaseLibrary::from_manifest(p).map_err(|e| format!("loading cases from {}: {e}", p.display()))?,
            None => CaseLibrary::default(),
        };
        let sessions =
            SessionStore::open(&config.session_dir).map_err(|e| format!("{}: {e}", config.session_dir.display()))?;
        Ok(Self::new(models, cases, sessions, config))
    }

    fn models(&self) -> Result<Arc<Models>, ApiError> {
        self.models.clone().ok_or(ApiError::ModelsNotLoaded)
    }

    fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            n_resamples: self.config.bootstrap_resamples,
            seed: self.config.bootstrap_seed,
            ..BootstrapConfig::default()
        }
    }

    /// Pipeline output for a case, computed once.
    fn ai_for_case(&self, case_id: &str) -> Result<Arc<RadiographPayload>, ApiError> {
        if let Some(p) = self.ai_cache.lock().expect("cache lock").get(case_id) {
            return Ok(p.clone());
        }
        let models = self.models()?;
        let case = self.cases.get(case_id).ok_or_else(|| ApiError::NotFound(format!("unknown case {case_id}")))?;
        let p = Arc::new(radiograph_payload(&diagnose_radiograph(&case.image, case_id, &models)?)?);
        self.ai_cache.lock().expect("cache lock").insert(case_id.to_string(), p.clone());
        Ok(p)
    }
}

/// Serialises `v` for a client after checking it for ground-truth fields.
pub fn client_json<T: Serialize>(status: StatusCode, v: &T) -> Result<Response, ApiError> {
    let body = serde_json::to_vec(v).map_err(|e| ApiError::Internal(e.to_string()))?;
    let value: serde_json::Value = serde_json::from_slice(&body).map_err(|e| ApiError::Internal(e.to_string()))?;
    let hits = leak::scan(&value);
    if !hits.is_empty() {
        return Err(ApiError::Internal(format!("refusing to send ground-truth fields: {}", hits.join(", "))));
    }
    Ok((status, [(header::CONTENT_TYPE, "application/json")], body).into_response())
}

pub fn router(state: SharedState) -> Router {
    let limit = state.config.max_upload_bytes;
    let api = Router::new()
        .route("/health", get(health))
        .route("/diagnose", post(diagnose).layer(DefaultBodyLimit::max(limit)))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/next", get(next_case))
        .route("/sessions/{id}/readings", post(submit_reading))
        .route("/sessions/{id}/report", get(get_session_report))
        .route("/report", get(get_study_report))
        .route("/openapi.yaml", get(openapi))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state.clone());
    let mut app = Router::new().nest("/api/v1", api);
    if let Some(dir) = &state.config.ui_dir {
        app = app.fallback_service(tower_http::services::ServeDir::new(dir));
    }
    app
}

async fn require_token(
    State(state): State<SharedState>,
    headers: HeaderMap,
    req: axum::extract::Request,
    next: Next,
) -> Response {
    if let Some(token) = &state.config.api_token {
        let ok = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub models_loaded: bool,
    pub n_cases: usize,
}

async fn health(State(s): State<SharedState>) -> Result<Response, ApiError> {
    client_json(StatusCode::OK, &Health { models_loaded: s.models.is_some(), n_cases: s.cases.len() })
}

async fn openapi() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/yaml")], OPENAPI_YAML)
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";
const JPEG_MAGIC: &[u8] = &[0xFF, 0xD8, 0xFF];

/// Accepts PNG or JPEG by signature or declared type; anything else is 415.
/// A declared or signed image that fails to decode is 422.
pub fn decode_upload(bytes: &[u8], content_type: Option<&str>) -> Result<ImageF32, ApiError> {
    let signed = bytes.starts_with(PNG_MAGIC) || bytes.starts_with(JPEG_MAGIC);
    let declared = content_type.is_some_and(|t| matches!(t, "image/png" | "image/jpeg" | "image/jpg"));
    if !signed && !declared {
        return Err(ApiError::UnsupportedMediaType(format!(
            "expected a PNG or JPEG image, got {}",
            content_type.unwrap_or("an unknown type")
        )));
    }
    ImageF32::decode(bytes).map_err(|e| ApiError::Unprocessable(format!("cannot decode image: {e}")))
}

struct Upload {
    id: String,
    image: ImageF32,
}

/// Multipart fields: one or more `image` files, optional `image_id` (one per
/// image, in order) and optional `subject_id` for a subject-level aggregate.
async fn diagnose(
    State(s): State<SharedState>,
    mp: Result<Multipart, MultipartRejection>,
) -> Result<Response, ApiError> {
    let mut mp = mp.map_err(|e| ApiError::UnsupportedMediaType(format!("expected multipart/form-data: {e}")))?;
    let mut files: Vec<(Option<String>, Option<String>, Vec<u8>)> = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    let mut subject: Option<String> = None;
    while let Some(field) = mp.next_field().await.map_err(|e| ApiError::BadRequest(e.to_string()))? {
        match field.name().unwrap_or_default() {
            "image" => {
                let ct = field.content_type().map(str::to_string);
                let name = field.file_name().map(str::to_string);
                let bytes = field.bytes().await.map_err(|e| ApiError::BadRequest(e.to_string()))?;
                files.push((name, ct, bytes.to_vec()));
            }
            "image_id" => ids.push(field.text().await.map_err(|e| ApiError::BadRequest(e.to_string()))?),
            "subject_id" => subject = Some(field.text().await.map_err(|e| ApiError::BadRequest(e.to_string()))?),
            _ => {}
        }
    }
    if files.is_empty() {
        return Err(ApiError::BadRequest("no 'image' field in upload".into()));
    }
    let mut uploads = Vec::with_capacity(files.len());
    for (k, (name, ct, bytes)) in files.into_iter().enumerate() {
        let image = decode_upload(&bytes, ct.as_deref())?;
        let id = ids.get(k).cloned().or_else(|| {
            name.as_deref().and_then(|n| FsPath::new(n).file_stem()).map(|s| s.to_string_lossy().into_owned())
        });
        uploads.push(Upload { id: id.unwrap_or_else(|| format!("upload-{k}")), image });
    }
    let models = s.models()?;
    let payload = tokio::task::spawn_blocking(move || diagnose_uploads(&models, &uploads, subject.as_deref()))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    client_json(StatusCode::OK, &payload)
}

fn diagnose_uploads(models: &Models, uploads: &[Upload], subject: Option<&str>) -> Result<DiagnosePayload, ApiError> {
    let diags =
        uploads.iter().map(|u| diagnose_radiograph(&u.image, &u.id, models)).collect::<avn_core::Result<Vec<_>>>()?;
    let subject = match subject {
        Some(sid) => {
            let recs: Vec<_> = diags.iter().flat_map(|d| d.records.iter().map(|r| (r.view, r))).collect();
            if recs.is_empty() {
                None
            } else {
                Some(aggregate_subject(sid, &recs)?)
            }
        }
        None => None,
    };
    let results = diags.iter().map(radiograph_payload).collect::<avn_core::Result<_>>()?;
    Ok(DiagnosePayload { results, subject })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub reader_id: String,
    pub mode: Mode,
    /// Case ids in reading order; defaults to the whole library.
    #[serde(default)]
    pub cases: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub reader_id: String,
    pub mode: Mode,
    pub n_cases: usize,
    pub n_read: usize,
    pub complete: bool,
}

fn info(s: &Session) -> SessionInfo {
    SessionInfo {
        session_id: s.session_id.clone(),
        reader_id: s.reader_id.clone(),
        mode: s.mode,
        n_cases: s.cases.len(),
        n_read: s.readings.len(),
        complete: s.is_complete(),
    }
}

async fn create_session(
    State(s): State<SharedState>,
    body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::Unprocessable(e.body_text()))?;
    if req.reader_id.trim().is_empty() {
        return Err(ApiError::Unprocessable("reader_id must be nonempty".into()));
    }
    let cases = req.cases.unwrap_or_else(|| s.cases.ids().to_vec());
    if cases.is_empty() {
        return Err(ApiError::Unprocessable("a session needs at least one case".into()));
    }
    if let Some(bad) = cases.iter().find(|c| s.cases.get(c).is_none()) {
        return Err(ApiError::Unprocessable(format!("unknown case {bad}")));
    }
    if req.mode == Mode::Assisted && s.models.is_none() {
        return Err(ApiError::ModelsNotLoaded);
    }
    let h = s.sessions.create(&req.reader_id, req.mode, cases).await?;
    let g = h.lock().await;
    client_json(StatusCode::CREATED, &info(&g))
}

async fn session_info(State(s): State<SharedState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let h = s.sessions.get(&id).await?;
    let g = h.lock().await;
    client_json(StatusCode::OK, &info(&g))
}

/// The next unread case. `ai` is present only in assisted sessions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextCase {
    pub session_id: String,
    pub done: bool,
    pub n_cases: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    /// Base64-encoded PNG.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ai: Option<RadiographPayload>,
}

async fn next_case(State(s): State<SharedState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let h = s.sessions.get(&id).await?;
    let mut g = h.lock().await;
    let Some((index, case_id)) = g.next_case().map(|(i, c)| (i, c.to_string())) else {
        let done = NextCase {
            session_id: id,
            done: true,
            n_cases: g.cases.len(),
            index: None,
            case_id: None,
            image: None,
            ai: None,
        };
        return client_json(StatusCode::OK, &done);
    };
    let case = s.cases.get(&case_id).ok_or_else(|| ApiError::Internal(format!("case {case_id} vanished")))?;
    let image = STANDARD.encode(case.image.encode_png()?);
    let ai = if g.mode == Mode::Assisted {
        let st = s.clone();
        let cid = case_id.clone();
        Some(
            (*tokio::task::spawn_blocking(move || st.ai_for_case(&cid))
                .await
                .map_err(|e| ApiError::Internal(e.to_string()))??)
            .clone(),
        )
    } else {
        None
    };
    g.mark_served(index, &case_id)?;
    let payload = NextCase {
        session_id: id,
        done: false,
        n_cases: g.cases.len(),
        index: Some(index),
        case_id: Some(case_id),
        image: Some(image),
        ai,
    };
    client_json(StatusCode::OK, &payload)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitReading {
    pub case_id: String,
    pub stage: Stage,
    /// Client-measured seconds.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadingAccepted {
    pub session_id: String,
    pub case_id: String,
    pub stage: Stage,
    pub elapsed: f64,
    pub elapsed_server: f64,
    pub remaining: usize,
}

async fn submit_reading(
    State(s): State<SharedState>,
    Path(id): Path<String>,
    body: Result<Json<SubmitReading>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let h = s.sessions.get(&id).await?;
    let Json(req) = body.map_err(|e| ApiError::Unprocessable(e.body_text()))?;
    let mut g = h.lock().await;
    let r = g.submit(&req.case_id, req.stage, req.elapsed)?.clone();
    let remaining = g.cases.len() - g.readings.len();
    let out = ReadingAccepted {
        session_id: id,
        case_id: r.case_id,
        stage: r.stage,
        elapsed: r.elapsed,
        elapsed_server: r.elapsed_server,
        remaining,
    };
    client_json(StatusCode::CREATED, &out)
}

/// Truth and model stages for a fixed set of cases.
pub struct StageTable {
    pub truth: BTreeMap<String, Stage>,
    pub model: BTreeMap<String, Stage>,
}

impl CaseOracle for StageTable {
    fn truth(&self, case_id: &str) -> Option<Stage> {
        self.truth.get(case_id).copied()
    }
    fn model(&self, case_id: &str) -> Option<Stage> {
        self.model.get(case_id).copied()
    }
}

fn stage_table(s: &AppState, sessions: &[Session]) -> Result<StageTable, ApiError> {
    let mut truth = BTreeMap::new();
    let mut model = BTreeMap::new();
    for r in sessions.iter().flat_map(|x| x.readings.iter()) {
        if truth.contains_key(&r.case_id) {
            continue;
        }
        if let Some(c) = s.cases.get(&r.case_id) {
            truth.insert(r.case_id.clone(), c.truth);
            if s.models.is_some() {
                model.insert(r.case_id.clone(), s.ai_for_case(&r.case_id)?.image_stage());
            }
        }
    }
    Ok(StageTable { truth, model })
}

async fn snapshot(s: &AppState, ids: Option<&str>) -> Result<Vec<Session>, ApiError> {
    let handles = match ids {
        Some(id) => vec![s.sessions.get(id).await?],
        None => s.sessions.all().await,
    };
    let mut out = Vec::with_capacity(handles.len());
    for h in handles {
        out.push(h.lock().await.clone());
    }
    Ok(out)
}

async fn get_session_report(State(s): State<SharedState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let sessions = snapshot(&s, Some(&id)).await?;
    let st = s.clone();
    let report = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let table = stage_table(&st, &sessions)?;
        Ok(session_report(&sessions[0], &table, &st.bootstrap()))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    client_json(StatusCode::OK, &report)
}

async fn get_study_report(State(s): State<SharedState>) -> Result<Response, ApiError> {
    let sessions = snapshot(&s, None).await?;
    let st = s.clone();
    let report = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let table = stage_table(&st, &sessions)?;
        Ok(study_report(&sessions, &table, &st.bootstrap()))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    client_json(StatusCode::OK, &report)
}
