//! HTTP+JSON API over the session engine.
//!
//! Every state change is appended to the session's log and synced before
//! the response is sent. Requests for one session are serialized by a
//! per-session lock; model training runs on the blocking pool and is applied
//! as its own event once done, so clients only ever see a pending screen or
//! a complete packet.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;

use super::store::{EventStore, StoreError};
use crate::dataset::ProfilePool;
use crate::session::forms::AnswerValue;
use crate::session::{
    Ack, Command, Condition, Created, Phase, ResponseItem, Screen, SessionError, SessionReport, SessionState, Stage,
};
use crate::teaching::GuidanceConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            error: error.into(),
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`"))
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::IllegalPhase { .. } => (StatusCode::CONFLICT, "illegal_transition"),
            SessionError::Duplicate(_) => (StatusCode::CONFLICT, "duplicate"),
            SessionError::Pending => (StatusCode::CONFLICT, "pending"),
            SessionError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            SessionError::Corrupt(_) => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt_log"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// JSON body extractor that reports every malformed body as 422.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(rejection) => Err(rejection_error(rejection)),
        }
    }
}

fn rejection_error(rejection: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", rejection.body_text())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub task_id: String,
    #[serde(default)]
    pub condition: Option<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitResponses {
    #[serde(default)]
    pub request_id: Option<String>,
    /// The assessment the client believes it is answering; rejected when
    /// the session is elsewhere.
    #[serde(default)]
    pub phase: Option<Phase>,
    pub responses: Vec<ResponseItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitCheckTest {
    #[serde(default)]
    pub request_id: Option<String>,
    pub answers: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitAttributes {
    #[serde(default)]
    pub request_id: Option<String>,
    /// Defaults to the stage of the current questionnaire.
    #[serde(default, alias = "phase")]
    pub stage: Option<Stage>,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitQuestionnaire {
    #[serde(default)]
    pub request_id: Option<String>,
    #[serde(default)]
    pub stage: Option<Stage>,
    pub answers: BTreeMap<String, AnswerValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    pub task_id: String,
    pub condition: Condition,
    pub phase: Phase,
    pub next: Screen,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// 128 random bits from the OS-seeded generator, as hex.
fn new_session_id() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

type SessionHandle = Arc<AsyncMutex<SessionState>>;

/// Shared state behind the router.
pub struct Service {
    store: EventStore,
    pools: BTreeMap<String, ProfilePool>,
    config: GuidanceConfig,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    assignment: Mutex<ChaCha8Rng>,
    training: Mutex<HashSet<String>>,
}

impl Service {
    /// `seed` drives the random condition assignment.
    pub fn new(store: EventStore, pools: Vec<ProfilePool>, config: GuidanceConfig, seed: u64) -> Arc<Self> {
        Arc::new(Self {
            store,
            pools: pools.into_iter().map(|p| (p.task.task_id.clone(), p)).collect(),
            config,
            sessions: Mutex::new(HashMap::new()),
            assignment: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            training: Mutex::new(HashSet::new()),
        })
    }

    pub fn store(&self) -> &EventStore {
        &self.store
    }

    /// Reloads every stored session and restarts interrupted training.
    /// Must run inside a Tokio runtime.
    pub fn recover(self: &Arc<Self>) -> Result<usize, ApiError> {
        let ids = self.store.session_ids()?;
        for id in &ids {
            let events = self.store.load(id)?;
            let state = SessionState::replay(&events)?;
            self.schedule_training(&state);
            self.sessions
                .lock()
                .expect("session map lock")
                .insert(id.clone(), Arc::new(AsyncMutex::new(state)));
        }
        Ok(ids.len())
    }

    fn handle(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    pub async fn create_session(self: &Arc<Self>, request: CreateSession) -> Result<ApiSession, ApiError> {
        let pool = self.pools.get(&request.task_id).ok_or_else(|| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "validation",
                format!("unknown task `{}`", request.task_id),
            )
        })?;
        let condition = request.condition.unwrap_or_else(|| {
            let mut rng = self.assignment.lock().expect("assignment lock");
            if rng.random::<bool>() {
                Condition::FairMachineGuidance
            } else {
                Condition::BiasFeedback
            }
        });
        let session_id = new_session_id();
        let created = Created {
            session_id: session_id.clone(),
            condition,
            pool: pool.clone(),
            config: self.config.clone(),
        };
        let (state, event) = SessionState::create(created, now_ms())?;
        self.store.append(&session_id, &[event])?;
        let api = ApiSession {
            session_id: session_id.clone(),
            task_id: request.task_id,
            condition,
            phase: state.phase.clone(),
            next: state.view(),
        };
        self.sessions
            .lock()
            .expect("session map lock")
            .insert(session_id, Arc::new(AsyncMutex::new(state)));
        Ok(api)
    }

    /// Runs a command built from the current state, persisting its events
    /// before the state is updated.
    pub async fn execute<F>(self: &Arc<Self>, id: &str, request_id: Option<String>, build: F) -> Result<Ack, ApiError>
    where
        F: FnOnce(&SessionState) -> Result<Command, ApiError>,
    {
        let handle = self.handle(id)?;
        let mut state = handle.lock().await;
        if let Some(ack) = request_id.as_ref().and_then(|r| state.acks.get(r)) {
            return Ok(ack.clone());
        }
        let command = build(&state)?;
        let mut next = state.clone();
        let outcome = next.execute(request_id.as_deref(), command, now_ms())?;
        self.store.append(id, &outcome.events)?;
        *state = next;
        self.schedule_training(&state);
        Ok(outcome.ack)
    }

    /// The next screen. Serving a treatment records that it was shown;
    /// later calls move on to the cycle's mini-test.
    pub async fn next(self: &Arc<Self>, id: &str) -> Result<Screen, ApiError> {
        let handle = self.handle(id)?;
        let mut state = handle.lock().await;
        let screen = state.view();
        if let Phase::Treatment { cycle } = state.phase {
            if state.pending_training().is_none() && !state.treatments_shown.contains(&cycle) {
                let mut next = state.clone();
                let outcome = next.execute(None, Command::ShowTreatment, now_ms())?;
                self.store.append(id, &outcome.events)?;
                *state = next;
            }
        }
        Ok(screen)
    }

    pub async fn report(&self, id: &str) -> Result<SessionReport, ApiError> {
        let handle = self.handle(id)?;
        let state = handle.lock().await;
        Ok(state.finalize())
    }

    fn schedule_training(self: &Arc<Self>, state: &SessionState) {
        let Some(job) = state.training_job() else {
            return;
        };
        let id = state.session_id.clone();
        if !self.training.lock().expect("training lock").insert(id.clone()) {
            return;
        }
        let service = Arc::clone(self);
        tokio::spawn(async move {
            let cycle = job.cycle;
            let result = tokio::task::spawn_blocking(move || job.run())
                .await
                .map_err(|e| e.to_string())
                .and_then(|r| r.map_err(|e| e.to_string()));
            let Ok(handle) = service.handle(&id) else {
                return;
            };
            let mut state = handle.lock().await;
            service.training.lock().expect("training lock").remove(&id);
            if state.pending_training() != Some(cycle) {
                return;
            }
            let mut next = state.clone();
            match next.execute(None, Command::CompleteTraining(result), now_ms()) {
                Ok(outcome) => match service.store.append(&id, &outcome.events) {
                    Ok(()) => *state = next,
                    Err(e) => eprintln!("session {id}: could not persist trained models: {e}"),
                },
                Err(e) => eprintln!("session {id}: trained models rejected: {e}"),
            }
            service.schedule_training(&state);
        });
    }

    /// Whether any training task is still running.
    pub fn training_in_flight(&self) -> bool {
        !self.training.lock().expect("training lock").is_empty()
    }
}

fn questionnaire_stage(state: &SessionState, stage: Option<Stage>) -> Result<Stage, ApiError> {
    match (stage, &state.phase) {
        (Some(s), _) => Ok(s),
        (None, Phase::Questionnaire { stage }) => Ok(*stage),
        (None, phase) => Err(ApiError::new(
            StatusCode::CONFLICT,
            "illegal_transition",
            format!("no questionnaire is open during {phase}"),
        )),
    }
}

async fn create(
    State(svc): State<Arc<Service>>,
    ApiJson(body): ApiJson<CreateSession>,
) -> Result<(StatusCode, Json<ApiSession>), ApiError> {
    Ok((StatusCode::CREATED, Json(svc.create_session(body).await?)))
}

async fn next(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Json<Screen>, ApiError> {
    Ok(Json(svc.next(&id).await?))
}

async fn responses(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<SubmitResponses>,
) -> Result<Json<Ack>, ApiError> {
    let ack = svc
        .execute(&id, body.request_id, |state| {
            if let Some(expected) = &body.phase {
                let current = match &state.phase {
                    Phase::Treatment { cycle } => Phase::MiniTest { cycle: *cycle },
                    other => other.clone(),
                };
                if *expected != current {
                    return Err(ApiError::new(
                        StatusCode::CONFLICT,
                        "illegal_transition",
                        format!("cannot answer {expected} during {}", state.phase),
                    ));
                }
            }
            Ok(Command::SubmitResponses(body.responses))
        })
        .await?;
    Ok(Json(ack))
}

async fn checktest(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<SubmitCheckTest>,
) -> Result<Json<Ack>, ApiError> {
    let ack = svc
        .execute(&id, body.request_id, |_| Ok(Command::SubmitCheckTest(body.answers)))
        .await?;
    Ok(Json(ack))
}

async fn attributes(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<SubmitAttributes>,
) -> Result<Json<Ack>, ApiError> {
    let ack = svc
        .execute(&id, body.request_id, |state| {
            Ok(Command::SubmitAttributes {
                stage: questionnaire_stage(state, body.stage)?,
                attributes: body.attributes,
            })
        })
        .await?;
    Ok(Json(ack))
}

async fn questionnaire(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<SubmitQuestionnaire>,
) -> Result<Json<Ack>, ApiError> {
    let ack = svc
        .execute(&id, body.request_id, |state| {
            Ok(Command::SubmitQuestionnaire {
                stage: questionnaire_stage(state, body.stage)?,
                answers: body.answers,
            })
        })
        .await?;
    Ok(Json(ack))
}

async fn report(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Json<SessionReport>, ApiError> {
    Ok(Json(svc.report(&id).await?))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/responses", post(responses))
        .route("/sessions/{id}/checktest", post(checktest))
        .route("/sessions/{id}/attributes", post(attributes))
        .route("/sessions/{id}/questionnaire", post(questionnaire))
        .route("/sessions/{id}/report", get(report))
        .with_state(service)
}
