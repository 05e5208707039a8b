//! HTTP JSON API holding live trials for interactive conduct.
//!
//! Trials are independent; cohort posts to one trial are serialized by a
//! per-trial lock. With a store configured every committed change is
//! journaled before it is acknowledged and journals are replayed on start.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method as HttpMethod, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use pocrm_core::coherency::{CoherencyEvent, CoherencyReport};
use pocrm_core::engine::{CohortRecord, CohortStep, EngineError};
use pocrm_core::{Design, DesignConfig, Dose, EstimateSnapshot, Trial};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;
use uuid::Uuid;

use crate::store::{JournalEntry, Store, StoreError};

/// Header set on dry-run responses; the body is identical to a commit.
pub const DRY_RUN_HEADER: &str = "x-dry-run";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("trial {0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Internal(msg) = &self {
            tracing::error!(error = %msg, "request failed");
        }
        (
            self.status(),
            Json(ErrorBody {
                error: self.to_string(),
            }),
        )
            .into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::TrialComplete(_) => ApiError::Conflict(e.to_string()),
            EngineError::Config(_)
            | EngineError::Ordering(_)
            | EngineError::Inference(_)
            | EngineError::OutcomeCount { .. }
            | EngineError::DoseOutOfRange(_) => ApiError::Unprocessable(e.to_string()),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    AwaitingOutcomes,
    Complete,
}

/// Full state of one live trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub id: Uuid,
    pub status: TrialStatus,
    pub config: DesignConfig,
    pub cohorts_entered: usize,
    /// Current estimates.
    pub snapshot: EstimateSnapshot,
    /// Dose proposed for the next cohort; absent once complete.
    pub next_dose: Option<Dose>,
    /// Allocation rule applied to the current estimates.
    pub recommendation: Dose,
    pub n: Vec<u32>,
    pub y: Vec<u32>,
    /// One entry per cohort, with the estimates used to allocate it.
    pub history: Vec<CohortRecord>,
    pub events: Vec<CoherencyEvent>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortRequest {
    pub dose: Dose,
    pub dlts: Vec<bool>,
    /// When given, the post is rejected with 409 unless it would become
    /// this (1-based) cohort.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_cohort: Option<usize>,
}

/// Outcome of entering one cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortResponse {
    pub trial_id: Uuid,
    pub cohort: usize,
    pub dose: Dose,
    pub outcomes: Vec<bool>,
    pub status: TrialStatus,
    /// Estimates after this cohort.
    pub snapshot: EstimateSnapshot,
    pub previous_estimates: Vec<f64>,
    /// `snapshot.estimates - previous_estimates`, per dose.
    pub delta: Vec<f64>,
    pub recommendation: Dose,
    pub next_dose: Option<Dose>,
    /// Coherency events raised by this transition.
    pub events: Vec<CoherencyEvent>,
}

impl CohortResponse {
    fn new(id: Uuid, previous: Vec<f64>, step: CohortStep) -> Self {
        let delta = step
            .snapshot
            .estimates
            .iter()
            .zip(&previous)
            .map(|(b, a)| b - a)
            .collect();
        Self {
            trial_id: id,
            cohort: step.cohort,
            dose: step.dose,
            outcomes: step.outcomes,
            status: if step.next_dose.is_some() {
                TrialStatus::AwaitingOutcomes
            } else {
                TrialStatus::Complete
            },
            snapshot: step.snapshot,
            previous_estimates: previous,
            delta,
            recommendation: step.recommendation,
            next_dose: step.next_dose,
            events: step.events,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub id: Uuid,
    pub status: TrialStatus,
    pub cohorts_entered: usize,
    pub n_cohorts: usize,
    pub created_at: DateTime<Utc>,
}

struct LiveTrial {
    id: Uuid,
    trial: Trial,
    created_at: DateTime<Utc>,
    updated_at: DateTime<Utc>,
    deleted: bool,
}

impl LiveTrial {
    fn status(&self) -> TrialStatus {
        if self.trial.is_complete() {
            TrialStatus::Complete
        } else {
            TrialStatus::AwaitingOutcomes
        }
    }

    fn view(&self) -> Result<TrialView, ApiError> {
        let record = self.trial.record()?;
        Ok(TrialView {
            id: self.id,
            status: self.status(),
            config: self.trial.design().config().clone(),
            cohorts_entered: record.cohorts.len(),
            snapshot: record.terminal,
            next_dose: (!self.trial.is_complete()).then(|| self.trial.next_dose()),
            recommendation: record.recommendation,
            n: record.n,
            y: record.y,
            history: record.cohorts,
            events: record.audit.events,
            created_at: self.created_at,
            updated_at: self.updated_at,
        })
    }

    fn summary(&self) -> TrialSummary {
        TrialSummary {
            id: self.id,
            status: self.status(),
            cohorts_entered: self.trial.cohorts().len(),
            n_cohorts: self.trial.design().config().n_cohorts,
            created_at: self.created_at,
        }
    }
}

type Entry = Arc<Mutex<LiveTrial>>;

struct Inner {
    trials: RwLock<HashMap<Uuid, Entry>>,
    store: Option<Store>,
    token: Option<String>,
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Builds the state, replaying every journal found in `store`.
    pub fn new(store: Option<Store>, token: Option<String>) -> Result<Self, StoreError> {
        let mut trials = HashMap::new();
        if let Some(store) = &store {
            for (id, journal) in store.load()? {
                let path = store.dir().join(format!("{id}.jsonl"));
                let live =
                    rebuild(id, journal).map_err(|reason| StoreError::Journal { path, reason })?;
                trials.insert(id, Arc::new(Mutex::new(live)));
            }
        }
        Ok(Self(Arc::new(Inner {
            trials: RwLock::new(trials),
            store,
            token: token.filter(|t| !t.is_empty()),
        })))
    }

    pub fn in_memory() -> Self {
        Self::new(None, None).expect("no store to load")
    }

    pub fn trial_count(&self) -> usize {
        self.0.trials.read().unwrap().len()
    }

    fn get(&self, id: &str) -> Result<(Uuid, Entry), ApiError> {
        let not_found = || ApiError::NotFound(id.to_string());
        let id = Uuid::parse_str(id).map_err(|_| not_found())?;
        let entry = self
            .0
            .trials
            .read()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or_else(not_found)?;
        Ok((id, entry))
    }
}

fn rebuild(id: Uuid, journal: Vec<JournalEntry>) -> Result<LiveTrial, String> {
    let mut entries = journal.into_iter();
    let Some(JournalEntry::Created { at, config, .. }) = entries.next() else {
        return Err("missing creation entry".into());
    };
    let design = Design::new(config).map_err(|e| e.to_string())?;
    let mut live = LiveTrial {
        id,
        trial: Trial::new(design).map_err(|e| e.to_string())?,
        created_at: at,
        updated_at: at,
        deleted: false,
    };
    for (i, entry) in entries.enumerate() {
        match entry {
            JournalEntry::Cohort { at, dose, dlts } => {
                live.trial
                    .enter_cohort(dose, &dlts)
                    .map_err(|e| format!("cohort {}: {e}", i + 1))?;
                live.updated_at = at;
            }
            JournalEntry::Created { .. } => return Err("repeated creation entry".into()),
        }
    }
    Ok(live)
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::Unprocessable(format!("invalid body: {e}")))
}

async fn create_trial(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let config: DesignConfig = parse_body(&body)?;
    let trial = Trial::new(Design::new(config.clone())?)?;
    let id = Uuid::new_v4();
    let at = Utc::now();
    if let Some(store) = &state.0.store {
        store.append(id, &JournalEntry::Created { id, at, config })?;
    }
    let live = LiveTrial {
        id,
        trial,
        created_at: at,
        updated_at: at,
        deleted: false,
    };
    let view = live.view()?;
    state
        .0
        .trials
        .write()
        .unwrap()
        .insert(id, Arc::new(Mutex::new(live)));
    tracing::info!(%id, "trial created");
    let location = HeaderValue::from_str(&format!("/trials/{id}")).expect("ascii path");
    Ok((
        StatusCode::CREATED,
        [(header::LOCATION, location)],
        Json(view),
    )
        .into_response())
}

async fn list_trials(State(state): State<AppState>) -> Json<Vec<TrialSummary>> {
    let entries: Vec<Entry> = state.0.trials.read().unwrap().values().cloned().collect();
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        let live = entry.lock().await;
        if !live.deleted {
            out.push(live.summary());
        }
    }
    out.sort_by_key(|s| (s.created_at, s.id));
    Json(out)
}

async fn get_trial(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<TrialView>, ApiError> {
    let (_, entry) = state.get(&id)?;
    let live = entry.lock().await;
    if live.deleted {
        return Err(ApiError::NotFound(id));
    }
    Ok(Json(live.view()?))
}

async fn get_coherency(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<CoherencyReport>, ApiError> {
    let (_, entry) = state.get(&id)?;
    let live = entry.lock().await;
    if live.deleted {
        return Err(ApiError::NotFound(id));
    }
    Ok(Json(live.trial.record()?.audit))
}

fn dry_run_flag(query: &HashMap<String, String>) -> Result<bool, ApiError> {
    match query.get("dryrun").map(String::as_str) {
        None | Some("0") | Some("false") => Ok(false),
        Some("1") | Some("true") | Some("") => Ok(true),
        Some(other) => Err(ApiError::Unprocessable(format!(
            "invalid dryrun value {other:?}"
        ))),
    }
}

async fn post_cohort(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let (uuid, entry) = state.get(&id)?;
    let dry_run = dry_run_flag(&query)?;
    let request: CohortRequest = parse_body(&body)?;
    let mut live = entry.lock().await;
    if live.deleted {
        return Err(ApiError::NotFound(id));
    }
    let config = live.trial.design().config();
    if live.trial.is_complete() {
        return Err(ApiError::Conflict(format!(
            "trial is complete after {} cohorts",
            config.n_cohorts
        )));
    }
    let next = live.trial.cohorts().len() + 1;
    if let Some(expected) = request.expected_cohort {
        if expected != next {
            return Err(ApiError::Conflict(format!(
                "expected cohort {expected} but the next cohort is {next}"
            )));
        }
    }
    let previous = live.trial.snapshot().estimates.clone();
    if dry_run {
        let step = live.trial.preview(request.dose, &request.dlts)?;
        let body = Json(CohortResponse::new(uuid, previous, step));
        return Ok(([(DRY_RUN_HEADER, "1")], body).into_response());
    }
    let mut trial = live.trial.clone();
    let step = trial.enter_cohort(request.dose, &request.dlts)?;
    let at = Utc::now();
    if let Some(store) = &state.0.store {
        store.append(
            uuid,
            &JournalEntry::Cohort {
                at,
                dose: request.dose,
                dlts: request.dlts,
            },
        )?;
    }
    live.trial = trial;
    live.updated_at = at;
    tracing::info!(id = %uuid, cohort = step.cohort, dose = %step.dose, "cohort entered");
    Ok(Json(CohortResponse::new(uuid, previous, step)).into_response())
}

async fn delete_trial(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    let (uuid, _) = state.get(&id)?;
    let Some(entry) = state.0.trials.write().unwrap().remove(&uuid) else {
        return Err(ApiError::NotFound(id));
    };
    let mut live = entry.lock().await;
    live.deleted = true;
    if let Some(store) = &state.0.store {
        store.remove(uuid)?;
    }
    tracing::info!(id = %uuid, "trial deleted");
    Ok(StatusCode::NO_CONTENT)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.0.token {
        if matches!(*request.method(), HttpMethod::POST | HttpMethod::DELETE) {
            let presented = request
                .headers()
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "));
            if presented != Some(token.as_str()) {
                return ApiError::Unauthorized.into_response();
            }
        }
    }
    next.run(request).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/trials", post(create_trial).get(list_trials))
        .route("/trials/{id}", get(get_trial).delete(delete_trial))
        .route("/trials/{id}/cohorts", post(post_cohort))
        .route("/trials/{id}/coherency", get(get_coherency))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
