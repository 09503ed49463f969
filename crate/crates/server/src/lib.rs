//! HTTP and websocket front door for the chatbot engine.
//!
//! REST endpoints take `Authorization: Bearer <token>`; the push socket
//! also accepts `?token=` because browsers cannot set headers on upgrade.
//! See `docs/API.md` for payloads and framing.

pub mod config;
pub mod push;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use foodbot_core::clock::{Clock, ClockMode, SystemClock, VirtualClock};
use foodbot_core::engine::{ChatReply, ChatRequest, Engine, EngineParts};
use foodbot_core::goals::{load_defaults, ProgressReport, WeeklyReport};
use foodbot_core::graph::{KnowledgeGraph, Lexicon};
use foodbot_core::jit::{NotificationPrompt, SchedulerConfig};
use foodbot_core::journal::{EntryPatch, JournalEntry};
use foodbot_core::recommender::ScoredCandidate;
use foodbot_core::store::Store;
use foodbot_core::types::MealOccasion;
use foodbot_core::users::UserProfile;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

pub use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Core(#[from] foodbot_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ServerError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerError::Core(e) => e.kind(),
            ServerError::Config(_) => "config",
            ServerError::Io(_) => "io",
        }
    }
}

/// Shared by every handler and the ticker.
#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    push: broadcast::Sender<NotificationPrompt>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> AppState {
        let (push, _) = broadcast::channel(1024);
        AppState { engine, push }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn subscribe(&self) -> broadcast::Receiver<NotificationPrompt> {
        self.push.subscribe()
    }

    /// Runs one scheduler tick and fans new prompts out to live sockets.
    pub async fn tick(&self) -> Result<usize, ServerError> {
        let engine = self.engine.clone();
        let fresh = blocking(move || engine.tick()).await.map_err(ServerError::Core)?;
        for p in &fresh {
            // No subscribers is fine: the outbox replays on connect.
            let _ = self.push.send(p.clone());
        }
        Ok(fresh.len())
    }
}

/// Opens the store and graph named by `config` and builds an engine.
/// Returns the virtual clock too when the clock is simulated.
pub fn boot(config: &Config) -> Result<(Engine, Option<VirtualClock>), ServerError> {
    std::fs::create_dir_all(&config.data_dir)?;
    let graph = load_or_ingest_graph(config)?;
    let store = Arc::new(Store::open(config.store_dir())?);
    let (clock, virt): (Arc<dyn Clock>, _) = match config.clock {
        ClockMode::Realtime => (Arc::new(SystemClock::new()), None),
        ClockMode::Simulated => {
            let c = VirtualClock::new(config.sim_start.unwrap_or_else(chrono::Utc::now));
            (Arc::new(c.clone()), Some(c))
        }
    };
    let mut parts = EngineParts::shipped(store, Arc::new(graph), clock);
    if let Some(p) = &config.policies {
        parts.scheduler = SchedulerConfig::load(p)?;
    }
    if let Some(p) = &config.goals {
        parts.goal_defaults = load_defaults(p)?;
    }
    Ok((Engine::new(parts)?, virt))
}

fn load_or_ingest_graph(config: &Config) -> Result<KnowledgeGraph, ServerError> {
    let path = config.graph_path();
    if path.exists() {
        return Ok(KnowledgeGraph::load(&path)?);
    }
    let corpus = config.corpus.as_ref().ok_or_else(|| {
        ServerError::Config(format!(
            "no graph at {}; run `foodbot ingest` or set corpus",
            path.display()
        ))
    })?;
    let graph = ingest_file(corpus, config.lexicon.as_deref())?.0;
    graph.save(&path)?;
    Ok(graph)
}

/// Builds a graph from a corpus file.
pub fn ingest_file(
    corpus: &Path,
    lexicon: Option<&Path>,
) -> Result<(KnowledgeGraph, foodbot_core::graph::IngestReport), ServerError> {
    let lexicon = match lexicon {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::shipped(),
    };
    let text =
        std::fs::read_to_string(corpus).map_err(|e| ServerError::Config(format!("{}: {e}", corpus.display())))?;
    let mut graph = KnowledgeGraph::new(lexicon);
    let report = graph.ingest_jsonl(&text);
    Ok((graph, report))
}

/// Ticks every `every`; with a virtual clock, first advances it by
/// `every × speed` so simulated time flows at a fixed rate.
pub fn spawn_ticker(state: AppState, every: Duration, sim: Option<(VirtualClock, u32)>) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(every);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            if let Some((clock, speed)) = &sim {
                let step = chrono::Duration::from_std(every * *speed).unwrap_or(chrono::Duration::zero());
                clock.advance(step);
            }
            match state.tick().await {
                Ok(0) => {}
                Ok(n) => tracing::info!(prompts = n, "scheduler tick"),
                Err(e) => tracing::error!(error = %e, "scheduler tick failed"),
            }
        }
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(|| async { "ok" }))
        .route("/api/chat", post(chat))
        .route("/api/journal", get(journal))
        .route("/api/journal/{id}", patch(edit_entry).delete(delete_entry))
        .route("/api/goals", get(goals))
        .route("/api/recommendations", get(recommendations))
        .route("/api/report", get(report))
        .route("/api/push", get(push::upgrade))
        .layer(DefaultBodyLimit::max(64 * 1024))
        .with_state(state)
}

/// Binds, ticks and serves until ctrl-c.
pub async fn serve(config: Config) -> Result<(), ServerError> {
    let (engine, virt) = boot(&config)?;
    let state = AppState::new(Arc::new(engine));
    let listener = tokio::net::TcpListener::bind(&config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, clock = ?config.clock, "listening");
    let ticker = spawn_ticker(
        state.clone(),
        Duration::from_secs(config.tick_seconds),
        virt.map(|c| (c, config.sim_speed)),
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    ticker.abort();
    Ok(())
}

pub(crate) async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> foodbot_core::Result<T> + Send + 'static,
) -> foodbot_core::Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(foodbot_core::Error::Storage(format!("worker failed: {e}"))))
}

/// Error body: `{"error": kind, "message": text}`.
pub struct ApiError(foodbot_core::Error);

impl From<foodbot_core::Error> for ApiError {
    fn from(e: foodbot_core::Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use foodbot_core::Error as E;
        let status = match &self.0 {
            E::Validation(_) => StatusCode::BAD_REQUEST,
            E::NotFound(_) => StatusCode::NOT_FOUND,
            E::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let message = if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
            "internal error".to_string()
        } else {
            self.0.to_string()
        };
        (
            status,
            Json(serde_json::json!({ "error": self.0.kind(), "message": message })),
        )
            .into_response()
    }
}

pub(crate) fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(|t| t.trim().to_string())
}

fn require_token(headers: &HeaderMap) -> Result<String, ApiError> {
    bearer(headers).ok_or_else(|| ApiError(foodbot_core::Error::Unauthorized("missing bearer token".into())))
}

async fn authorize(state: &AppState, token: String) -> Result<UserProfile, ApiError> {
    let engine = state.engine.clone();
    Ok(blocking(move || engine.authorize(&token)).await?.1)
}

async fn chat(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<ChatRequest>,
) -> Result<Json<ChatReply>, ApiError> {
    let token = require_token(&headers)?;
    let engine = state.engine.clone();
    Ok(Json(blocking(move || engine.chat(&token, &req)).await?))
}

#[derive(Debug, Deserialize)]
struct DayQuery {
    day: Option<NaiveDate>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JournalView {
    pub day: NaiveDate,
    pub entries: Vec<JournalEntry>,
}

async fn journal(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<DayQuery>,
) -> Result<Json<JournalView>, ApiError> {
    let user = authorize(&state, require_token(&headers)?).await?;
    let engine = state.engine.clone();
    let day = q.day.unwrap_or_else(|| user.local_day(engine.now()));
    let entries = blocking(move || engine.journal_day(&user, Some(day))).await?;
    Ok(Json(JournalView { day, entries }))
}

/// Another user's entry id looks exactly like a missing one.
fn hide_foreign(e: foodbot_core::Error, id: &str) -> ApiError {
    match e {
        foodbot_core::Error::Unauthorized(_) => ApiError(foodbot_core::Error::not_found(format!("entry `{id}`"))),
        e => ApiError(e),
    }
}

async fn edit_entry(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    Json(patch): Json<EntryPatch>,
) -> Result<Json<JournalEntry>, ApiError> {
    let user = authorize(&state, require_token(&headers)?).await?;
    let engine = state.engine.clone();
    let key = id.clone();
    blocking(move || engine.edit_entry(&user, &key, &patch))
        .await
        .map(Json)
        .map_err(|e| hide_foreign(e, &id))
}

async fn delete_entry(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<JournalEntry>, ApiError> {
    let user = authorize(&state, require_token(&headers)?).await?;
    let engine = state.engine.clone();
    let key = id.clone();
    blocking(move || engine.delete_entry(&user, &key))
        .await
        .map(Json)
        .map_err(|e| hide_foreign(e, &id))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GoalsView {
    pub goals: Vec<ProgressReport>,
}

async fn goals(State(state): State<AppState>, headers: HeaderMap) -> Result<Json<GoalsView>, ApiError> {
    let user = authorize(&state, require_token(&headers)?).await?;
    let engine = state.engine.clone();
    let goals = blocking(move || engine.progress(&user)).await?;
    Ok(Json(GoalsView { goals }))
}

#[derive(Debug, Deserialize)]
struct RecQuery {
    meal: Option<MealOccasion>,
    k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecommendationItem {
    #[serde(flatten)]
    pub candidate: ScoredCandidate,
    pub name: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecommendationsView {
    pub items: Vec<RecommendationItem>,
}

async fn recommendations(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<RecQuery>,
) -> Result<Json<RecommendationsView>, ApiError> {
    let user = authorize(&state, require_token(&headers)?).await?;
    let engine = state.engine.clone();
    let items = blocking(move || {
        let recs = engine.recommendations(&user, q.meal, q.k)?;
        Ok(recs
            .into_iter()
            .map(|c| RecommendationItem {
                name: engine
                    .graph()
                    .food(c.food_id)
                    .map(|f| f.canonical_name.clone())
                    .unwrap_or_default(),
                candidate: c,
            })
            .collect())
    })
    .await?;
    Ok(Json(RecommendationsView { items }))
}

#[derive(Debug, Deserialize)]
struct WeekQuery {
    week: Option<NaiveDate>,
}

async fn report(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<WeekQuery>,
) -> Result<Json<WeeklyReport>, ApiError> {
    let user = authorize(&state, require_token(&headers)?).await?;
    let engine = state.engine.clone();
    Ok(Json(blocking(move || engine.weekly_report(&user, q.week)).await?))
}
