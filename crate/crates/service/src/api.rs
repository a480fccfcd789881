use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use pidalign_core::consistency::checkpoint::RoundSnapshot;
use pidalign_core::{GraphEdit, Resolution};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::store::{NewProject, Project, ProjectState};
use crate::ServiceError;

type ApiResult<T> = Result<T, ServiceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum JobStatus {
    Running,
    Succeeded,
    Failed,
}

struct Job {
    id: String,
    project: String,
    round: usize,
    total: usize,
    iteration: AtomicUsize,
    outcome: Mutex<(JobStatus, Option<String>)>,
}

impl Job {
    fn to_json(&self) -> Value {
        let (status, error) = self.outcome.lock().unwrap().clone();
        json!({
            "job": self.id,
            "project": self.project,
            "round": self.round,
            "status": status,
            "iteration": self.iteration.load(Ordering::Relaxed),
            "total": self.total,
            "error": error,
        })
    }
}

struct Slot {
    project: Project,
    /// Running job, if any.
    job: Option<Arc<Job>>,
}

impl Slot {
    fn state(&self) -> ProjectState {
        if self.job.is_some() {
            ProjectState::Matching
        } else {
            self.project.settled_state()
        }
    }
}

pub struct AppState {
    root: PathBuf,
    projects: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Arc<Self>> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Arc::new(Self { root, projects: Mutex::new(HashMap::new()), jobs: Mutex::new(HashMap::new()) }))
    }

    pub fn root(&self) -> &FsPath {
        &self.root
    }

    /// Cached project, loaded from disk on first use.
    fn slot(&self, id: &str) -> ApiResult<Arc<Mutex<Slot>>> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ServiceError::NotFound(format!("unknown project `{id}`")));
        }
        let mut projects = self.projects.lock().unwrap();
        if let Some(slot) = projects.get(id) {
            return Ok(slot.clone());
        }
        let project = Project::open(&self.root.join(id)).map_err(|e| match e {
            ServiceError::NotFound(_) => ServiceError::NotFound(format!("unknown project `{id}`")),
            other => other,
        })?;
        let slot = Arc::new(Mutex::new(Slot { project, job: None }));
        projects.insert(id.to_owned(), slot.clone());
        Ok(slot)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/projects", post(create_project))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/match", post(trigger_match))
        .route("/projects/{id}/jobs/{job}", get(get_job))
        .route("/projects/{id}/resolutions", post(submit_resolution))
        .route("/projects/{id}/rounds/{n}", get(get_round))
        .with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ServiceError::Invalid(e.body_text()))
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

fn snapshot_json(s: &RoundSnapshot) -> Value {
    json!({
        "round": s.round,
        "source": s.source.to_doc(),
        "target": s.target.to_doc(),
        "mapping": s.mapping,
        "report": s.report,
    })
}

fn project_json(slot: &Slot) -> Value {
    let m = slot.project.manifest();
    json!({
        "id": m.id,
        "state": slot.state(),
        "round": m.round,
        "config": m.config,
        "accepted": m.accepted,
        "pins": m.pins,
        "history": m.history,
        "job": slot.job.as_ref().map(|j| j.id.clone()),
        "latest": snapshot_json(slot.project.latest()),
    })
}

async fn create_project(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<NewProject>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req = body(payload)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let app2 = app.clone();
    let id2 = id.clone();
    let project = tokio::task::spawn_blocking(move || Project::create(app2.root(), &id2, req))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let slot = Slot { project, job: None };
    let out = json!({ "id": id, "round": 0, "state": slot.state() });
    app.projects.lock().unwrap().insert(id, Arc::new(Mutex::new(slot)));
    Ok((StatusCode::CREATED, Json(out)))
}

async fn get_project(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = app.slot(&id)?;
    let slot = slot.lock().unwrap();
    Ok(Json(project_json(&slot)))
}

async fn trigger_match(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let slot_ref = app.slot(&id)?;
    let (job, input) = {
        let mut slot = slot_ref.lock().unwrap();
        match slot.state() {
            ProjectState::Idle | ProjectState::AwaitingResolution => {}
            other => {
                return Err(ServiceError::Conflict(format!(
                    "cannot start matching while {}",
                    serde_json::to_value(other).unwrap().as_str().unwrap()
                )))
            }
        }
        let input = slot.project.match_input();
        let job = Arc::new(Job {
            id: uuid::Uuid::new_v4().simple().to_string(),
            project: id.clone(),
            round: input.round,
            total: input.config.outer_iters,
            iteration: AtomicUsize::new(0),
            outcome: Mutex::new((JobStatus::Running, None)),
        });
        slot.job = Some(job.clone());
        (job, input)
    };
    app.jobs.lock().unwrap().insert(job.id.clone(), job.clone());

    let worker = job.clone();
    tokio::task::spawn_blocking(move || {
        let result = input.run(&mut |it| worker.iteration.store(it, Ordering::Relaxed));
        let mut slot = slot_ref.lock().unwrap();
        let committed = result.and_then(|out| slot.project.commit_match(out));
        slot.job = None;
        let mut outcome = worker.outcome.lock().unwrap();
        *outcome = match committed {
            Ok(()) => (JobStatus::Succeeded, None),
            Err(e) => {
                log::error!("match job {} failed: {e}", worker.id);
                (JobStatus::Failed, Some(e.to_string()))
            }
        };
    });
    Ok((StatusCode::ACCEPTED, Json(job.to_json())))
}

async fn get_job(State(app): State<Arc<AppState>>, Path((id, job)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let jobs = app.jobs.lock().unwrap();
    match jobs.get(&job) {
        Some(j) if j.project == id => Ok(Json(j.to_json())),
        _ => Err(ServiceError::NotFound(format!("unknown job `{job}`"))),
    }
}

#[derive(Debug, Deserialize)]
struct ResolutionRequest {
    /// Round the client last saw; guards against stale or repeated
    /// submissions.
    round: usize,
    #[serde(default)]
    source_edits: Vec<GraphEdit>,
    #[serde(default)]
    target_edits: Vec<GraphEdit>,
    #[serde(default, alias = "acceptances")]
    accept: Vec<String>,
    #[serde(default)]
    pins: Vec<(String, String)>,
}

async fn submit_resolution(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<ResolutionRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    let slot = app.slot(&id)?;
    let mut slot = slot.lock().unwrap();
    if slot.job.is_some() {
        return Err(ServiceError::Conflict("matching in progress".into()));
    }
    let res = Resolution {
        source_edits: req.source_edits,
        target_edits: req.target_edits,
        accept: req.accept,
        pins: req.pins,
    };
    let round = slot.project.submit(req.round, res)?;
    Ok(Json(json!({ "id": id, "round": round, "state": slot.state() })))
}

async fn get_round(State(app): State<Arc<AppState>>, Path((id, n)): Path<(String, usize)>) -> ApiResult<Json<Value>> {
    let slot = app.slot(&id)?;
    let snapshot = slot.lock().unwrap().project.round(n)?;
    Ok(Json(snapshot_json(&snapshot)))
}
