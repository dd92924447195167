//! HTTP/JSON front end for live runs driven by an external decision maker.
//!
//! Endpoints:
//! - `POST /sessions` with a run configuration body
//! - `GET /sessions/{id}`
//! - `GET /sessions/{id}/candidates`
//! - `POST /sessions/{id}/ranking`
//! - `GET /sessions/{id}/trace` (`?format=csv` for CSV)
//! - `DELETE /sessions/{id}`

mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use iemoa_core::engine::RunConfig;
use iemoa_core::Error;
use serde::{Deserialize, Serialize};

pub use session::{Candidate, CandidatesView, Pending, Rejection, Session, SessionState, Status, TraceView};

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    /// How long an engine waits for a ranking before aborting; `None` waits
    /// indefinitely.
    pub idle_timeout: Option<Duration>,
}

impl AppState {
    pub fn new(idle_timeout: Option<Duration>) -> Arc<Self> {
        Arc::new(AppState {
            idle_timeout,
            ..AppState::default()
        })
    }

    pub fn create(&self, config: RunConfig) -> Result<Arc<Session>, Error> {
        let n = self.next_id.fetch_add(1, Ordering::SeqCst) + 1;
        let id = format!("s{n:06}");
        let session = Session::start(id.clone(), config, self.idle_timeout)?;
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, Arc::clone(&session));
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn remove(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).remove(id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<SessionState>,
}

struct Failure(StatusCode, ApiError);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn failure(code: StatusCode, msg: impl Into<String>) -> Failure {
    Failure(
        code,
        ApiError {
            error: msg.into(),
            field: None,
            state: None,
        },
    )
}

fn not_found(id: &str) -> Failure {
    failure(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let field = match &e {
            Error::InvalidParameter { field, .. } => Some(field.to_string()),
            _ => None,
        };
        Failure(
            StatusCode::UNPROCESSABLE_ENTITY,
            ApiError {
                error: e.to_string(),
                field,
                state: None,
            },
        )
    }
}

impl From<Rejection> for Failure {
    fn from(r: Rejection) -> Self {
        match r {
            Rejection::WrongState(state) => Failure(
                StatusCode::CONFLICT,
                ApiError {
                    error: "session is not awaiting a ranking".into(),
                    field: None,
                    state: Some(state),
                },
            ),
            Rejection::StaleInteraction { expected, got } => failure(
                StatusCode::CONFLICT,
                format!("ranking for interaction {got} but interaction {expected} is pending"),
            ),
            Rejection::Malformed(msg) => Failure(
                StatusCode::UNPROCESSABLE_ENTITY,
                ApiError {
                    error: msg,
                    field: Some("order".into()),
                    state: None,
                },
            ),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub status: Status,
}

/// Best-first candidate ids for the pending interaction.
#[derive(Debug, Serialize, Deserialize)]
pub struct RankingBody {
    pub interaction: usize,
    pub order: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct TraceQuery {
    pub format: Option<String>,
}

async fn create(State(app): State<Arc<AppState>>, body: Option<Json<RunConfig>>) -> Result<Response, Failure> {
    let config = body.map(|Json(c)| c).unwrap_or_default();
    let session = app.create(config)?;
    let created = Created {
        id: session.id.clone(),
        status: session.status(),
    };
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn status(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Status>, Failure> {
    let s = app.get(&id).ok_or_else(|| not_found(&id))?;
    Ok(Json(s.status()))
}

async fn candidates(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<CandidatesView>, Failure> {
    let s = app.get(&id).ok_or_else(|| not_found(&id))?;
    Ok(Json(s.candidates()))
}

async fn ranking(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<RankingBody>,
) -> Result<Json<Status>, Failure> {
    let s = app.get(&id).ok_or_else(|| not_found(&id))?;
    Ok(Json(s.submit(body.interaction, &body.order)?))
}

async fn trace(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<TraceQuery>,
) -> Result<Response, Failure> {
    let s = app.get(&id).ok_or_else(|| not_found(&id))?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(s.trace()).into_response()),
        Some("csv") => Ok(([(header::CONTENT_TYPE, "text/csv")], s.trace_csv()).into_response()),
        Some(other) => Err(failure(StatusCode::BAD_REQUEST, format!("unknown format `{other}`"))),
    }
}

async fn cancel(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, Failure> {
    let s = app.remove(&id).ok_or_else(|| not_found(&id))?;
    s.cancel();
    Ok(StatusCode::NO_CONTENT)
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(status).delete(cancel))
        .route("/sessions/{id}/candidates", get(candidates))
        .route("/sessions/{id}/ranking", post(ranking))
        .route("/sessions/{id}/trace", get(trace))
        .with_state(app)
}

/// Binds and serves until the process ends.
pub async fn serve(addr: SocketAddr, app: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(app)).await
}
