//! Local JSON-over-HTTP decision service.
//!
//! Every mutation is validated on a copy of the trial, appended to the
//! write-ahead audit file (one JSON record per line, fsynced) and only then
//! committed. Restarting on the same audit file replays it.

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use adboin12::engine::{Decision, SCHEMA_VERSION};
use adboin12::tables::TableSet;
use adboin12::{DesignParams, Error, OutcomeCounts2x2, StateCode, TrialState};
use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::RwLock;

use crate::error::{CliError, Result};
use crate::report;

/// One line of the write-ahead audit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WalRecord {
    Init {
        schema_version: u32,
        params: DesignParams,
    },
    Cohort {
        dose: usize,
        outcomes: OutcomeCounts2x2,
        timestamp_ms: Option<u64>,
    },
    Reset {
        params: DesignParams,
        timestamp_ms: Option<u64>,
    },
}

struct Wal {
    path: PathBuf,
    file: File,
}

impl Wal {
    fn append(&mut self, record: &WalRecord) -> std::io::Result<()> {
        let mut line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()
    }
}

/// Rebuild a trial from audit records. A final line without its newline is
/// an interrupted write and is ignored.
pub fn replay_wal(text: &str) -> adboin12::Result<Option<TrialState>> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut trial: Option<TrialState> = None;
    for (i, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: WalRecord = serde_json::from_str(line)
            .map_err(|e| Error::InvalidArgument(format!("audit line {}: {e}", i + 1)))?;
        match record {
            WalRecord::Init { schema_version, params } => {
                if schema_version != SCHEMA_VERSION {
                    return Err(Error::InvalidArgument(format!(
                        "audit line {}: schema version {schema_version}, expected {SCHEMA_VERSION}",
                        i + 1
                    )));
                }
                trial = Some(TrialState::new(params)?);
            }
            WalRecord::Reset { params, .. } => trial = Some(TrialState::new(params)?),
            WalRecord::Cohort {
                dose,
                outcomes,
                timestamp_ms,
            } => {
                let t = trial
                    .as_mut()
                    .ok_or_else(|| Error::InvalidArgument(format!("audit line {}: cohort before init", i + 1)))?;
                t.submit_cohort(dose, outcomes, timestamp_ms)?;
            }
        }
    }
    Ok(trial)
}

struct Inner {
    trial: TrialState,
    wal: Option<Wal>,
}

impl Inner {
    /// Persist `record`, then install `next`.
    fn commit(&mut self, record: WalRecord, next: TrialState) -> std::result::Result<(), ApiError> {
        if let Some(wal) = self.wal.as_mut() {
            wal.append(&record).map_err(|e| ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                code: "audit_write",
                message: format!("{}: {e}", wal.path.display()),
            })?;
        }
        self.trial = next;
        Ok(())
    }
}

/// Shared service state: one trial, mutated strictly one request at a time.
pub struct Service {
    inner: RwLock<Inner>,
}

impl Service {
    /// In-memory service without an audit file.
    pub fn ephemeral(params: DesignParams) -> Result<Self> {
        Ok(Self {
            inner: RwLock::new(Inner {
                trial: TrialState::new(params)?,
                wal: None,
            }),
        })
    }

    /// Service backed by `audit_path`. An existing non-empty file is replayed
    /// (and `params` ignored); otherwise the file is started with `params`.
    pub fn open(params: DesignParams, audit_path: &Path) -> Result<Self> {
        let io = |source| CliError::Io {
            path: audit_path.to_path_buf(),
            source,
        };
        let existing = match std::fs::read_to_string(audit_path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(e)),
        };
        let recovered = replay_wal(&existing)?;
        let file = OpenOptions::new().create(true).append(true).open(audit_path).map_err(io)?;
        // Drop a torn final line so the next record starts cleanly.
        let complete = existing.rfind('\n').map_or(0, |i| i + 1);
        if complete < existing.len() {
            file.set_len(complete as u64).map_err(io)?;
        }
        let mut wal = Wal {
            path: audit_path.to_path_buf(),
            file,
        };
        let trial = match recovered {
            Some(t) => t,
            None => {
                let t = TrialState::new(params.clone())?;
                wal.append(&WalRecord::Init {
                    schema_version: SCHEMA_VERSION,
                    params,
                })
                .map_err(io)?;
                t
            }
        };
        Ok(Self {
            inner: RwLock::new(Inner { trial, wal: Some(wal) }),
        })
    }

    pub async fn snapshot(&self) -> TrialState {
        self.inner.read().await.trial.clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::State {
                code: StateCode::DoseMismatch | StateCode::OutOfOrder,
                ..
            } => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        let message = match &e {
            Error::State { message, .. } => message.clone(),
            other => other.to_string(),
        };
        Self {
            status,
            code: e.code(),
            message,
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_json",
            message: e.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = std::result::Result<Json<Value>, ApiError>;

/// Body of `POST /cohort` and `POST /whatif`. Doses are zero-based.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortBody {
    pub dose: usize,
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub d: u32,
}

impl CohortBody {
    fn outcomes(&self) -> OutcomeCounts2x2 {
        OutcomeCounts2x2::new(self.a, self.b, self.c, self.d)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetBody {
    pub params: Option<DesignParams>,
}

fn now_ms() -> Option<u64> {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_millis() as u64)
}

fn decision_body(decision: &Decision, report: String) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "summary": decision.to_string(),
        "decision": decision,
        "report": report,
    })
}

async fn design(State(svc): State<Arc<Service>>) -> ApiResult {
    let inner = svc.inner.read().await;
    Ok(Json(json!(inner.trial.params)))
}

async fn tables(State(svc): State<Arc<Service>>) -> ApiResult {
    let params = svc.inner.read().await.trial.params.clone();
    let set = TableSet::generate(&params, &[params.theta])?;
    Ok(Json(json!(set)))
}

async fn state(State(svc): State<Arc<Service>>) -> ApiResult {
    let inner = svc.inner.read().await;
    Ok(Json(json!(inner.trial)))
}

async fn decision(State(svc): State<Arc<Service>>) -> ApiResult {
    let inner = svc.inner.read().await;
    let d = inner.trial.recommendation()?;
    Ok(Json(decision_body(&d, report::render(&inner.trial)?)))
}

async fn cohort(
    State(svc): State<Arc<Service>>,
    body: std::result::Result<Json<CohortBody>, JsonRejection>,
) -> ApiResult {
    let Json(body) = body?;
    let mut inner = svc.inner.write().await;
    let ts = now_ms();
    let mut next = inner.trial.clone();
    let d = next.submit_cohort(body.dose, body.outcomes(), ts)?;
    let text = report::render(&next)?;
    inner.commit(
        WalRecord::Cohort {
            dose: body.dose,
            outcomes: body.outcomes(),
            timestamp_ms: ts,
        },
        next,
    )?;
    Ok(Json(decision_body(&d, text)))
}

async fn whatif(
    State(svc): State<Arc<Service>>,
    body: std::result::Result<Json<CohortBody>, JsonRejection>,
) -> ApiResult {
    let Json(body) = body?;
    let inner = svc.inner.read().await;
    let d = inner.trial.what_if(body.dose, body.outcomes())?;
    Ok(Json(decision_body(&d, report::render_decision(&d))))
}

async fn reset(
    State(svc): State<Arc<Service>>,
    body: std::result::Result<Json<ResetBody>, JsonRejection>,
) -> ApiResult {
    // An empty body keeps the current design.
    let body = match body {
        Ok(Json(b)) => b,
        Err(JsonRejection::MissingJsonContentType(_)) => ResetBody::default(),
        Err(e) => return Err(e.into()),
    };
    let mut inner = svc.inner.write().await;
    let params = body.params.unwrap_or_else(|| inner.trial.params.clone());
    let next = TrialState::new(params.clone())?;
    let out = json!(next);
    inner.commit(
        WalRecord::Reset {
            params,
            timestamp_ms: now_ms(),
        },
        next,
    )?;
    Ok(Json(out))
}

async fn audit(State(svc): State<Arc<Service>>) -> ApiResult {
    let inner = svc.inner.read().await;
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "entries": inner.trial.audit,
    })))
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/design", get(design))
        .route("/tables", get(tables))
        .route("/state", get(state))
        .route("/decision", get(decision))
        .route("/cohort", post(cohort))
        .route("/whatif", post(whatif))
        .route("/reset", post(reset))
        .route("/audit", get(audit))
        .with_state(svc)
}

/// Serve on `127.0.0.1:port` until interrupted.
pub fn serve(svc: Service, port: u16) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| CliError::Io {
            path: PathBuf::from(addr.to_string()),
            source,
        })?;
        eprintln!("listening on http://{addr} (local only, no authentication)");
        axum::serve(listener, router(Arc::new(svc)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|source| CliError::Io {
                path: PathBuf::from(addr.to_string()),
                source,
            })
    })
}
