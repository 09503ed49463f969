//! Wires sessions, NLU, dialog, services and the scheduler together.
//!
//! A chat turn runs under its session's lock:
//!
//! 1. a cached reply for the same `(session, turn_id)` is returned as is;
//! 2. the text is parsed in the light of the current context and stepped;
//! 3. the turn record (reply, commands, new state) and then the new state
//!    are persisted;
//! 4. commands run — each is idempotent per turn id — and the record is
//!    marked done.
//!
//! A retried turn whose record is not yet done re-runs its commands. If a
//! command fails, the old state is restored, the record dropped and an
//! apology returned, so the client may retry.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use parking_lot::Mutex;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::dialog::{ActiveContext, BotResponse, Command, Dialog, DialogState, Turn};
use crate::error::{Error, Result};
use crate::goals::{GoalTemplate, Goals, ProgressReport, WeeklyReport};
use crate::graph::KnowledgeGraph;
use crate::jit::{NotificationPrompt, Scheduler, SchedulerConfig};
use crate::journal::{EntryPatch, Journal, JournalEntry};
use crate::nlu::{Intent, Nlu, ParseResult, TrainingExample};
use crate::recommender::{RecommenderConfig, ScoredCandidate};
use crate::services::Services;
use crate::store::{Family, Store};
use crate::types::{MealOccasion, UserId};
use crate::users::{self, UserProfile};

pub const MAX_TEXT_BYTES: usize = 1024;
pub const MAX_TURN_ID: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub session_id: String,
    pub user_id: UserId,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub text: Option<String>,
    /// A tapped card: 1-based option index.
    #[serde(default)]
    pub option_index: Option<u32>,
    #[serde(default)]
    pub turn_id: Option<String>,
    /// Informational; the server clock is authoritative.
    #[serde(default)]
    pub client_ts: Option<DateTime<Utc>>,
}

impl ChatRequest {
    pub fn text(text: impl Into<String>) -> Self {
        ChatRequest {
            text: Some(text.into()),
            ..Default::default()
        }
    }

    pub fn option(i: u32) -> Self {
        ChatRequest {
            option_index: Some(i),
            ..Default::default()
        }
    }

    pub fn with_turn(mut self, turn_id: impl Into<String>) -> Self {
        self.turn_id = Some(turn_id.into());
        self
    }

    fn validate(&self) -> Result<()> {
        match (&self.text, self.option_index) {
            (Some(_), Some(_)) => return Err(Error::validation("send either text or option_index, not both")),
            (None, None) => return Err(Error::validation("text or option_index is required")),
            (Some(t), None) => {
                if t.len() > MAX_TEXT_BYTES {
                    return Err(Error::validation(format!("text exceeds {MAX_TEXT_BYTES} bytes")));
                }
                if t.trim().is_empty() {
                    return Err(Error::validation("text is empty"));
                }
            }
            (None, Some(0)) => return Err(Error::validation("option_index starts at 1")),
            (None, Some(_)) => {}
        }
        if let Some(t) = &self.turn_id {
            if t.is_empty() || t.len() > MAX_TURN_ID || t.contains('/') || !t.is_ascii() {
                return Err(Error::validation(format!(
                    "turn_id must be 1-{MAX_TURN_ID} ASCII characters without `/`"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub response: BotResponse,
    pub context: ActiveContext,
    pub turn_id: String,
    pub intent: Intent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TurnRecord {
    reply: ChatReply,
    commands: Vec<Command>,
    state: DialogState,
    done: bool,
}

pub struct EngineParts {
    pub store: Arc<Store>,
    pub graph: Arc<KnowledgeGraph>,
    pub clock: Arc<dyn Clock>,
    pub nlu: Nlu,
    pub dialog: Dialog,
    pub goal_defaults: Vec<GoalTemplate>,
    pub recommender: RecommenderConfig,
    pub scheduler: SchedulerConfig,
}

impl EngineParts {
    /// Shipped NLU, templates, goals and policies.
    pub fn shipped(store: Arc<Store>, graph: Arc<KnowledgeGraph>, clock: Arc<dyn Clock>) -> EngineParts {
        EngineParts {
            store,
            graph,
            clock,
            nlu: Nlu::shipped(),
            dialog: Dialog::shipped(),
            goal_defaults: crate::goals::default_goals(),
            recommender: RecommenderConfig::default(),
            scheduler: SchedulerConfig::shipped(),
        }
    }
}

pub struct Engine {
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    nlu: Nlu,
    dialog: Arc<Dialog>,
    svc: Services,
    scheduler: Scheduler,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn session_key(token: &str) -> String {
    format!("s/{token}")
}

fn state_key(session_id: &str) -> String {
    format!("d/{session_id}")
}

fn turn_key(session_id: &str, turn_id: &str) -> String {
    format!("r/{session_id}/{turn_id}")
}

impl Engine {
    /// Loads persisted training examples, rebuilds popularity counts from
    /// the journal and sets the scheduler's tick origin.
    pub fn new(parts: EngineParts) -> Result<Engine> {
        let EngineParts {
            store,
            graph,
            clock,
            nlu,
            dialog,
            goal_defaults,
            recommender,
            scheduler,
        } = parts;
        for g in &goal_defaults {
            g.validate()?;
        }
        nlu.load_persisted(&store)?;
        let journal = Arc::new(Journal::new(store.clone(), graph.clone(), clock.clone()));
        journal.recount_popularity()?;
        let goals = Arc::new(Goals::new(store.clone(), journal.clone(), goal_defaults));
        let svc = Services {
            graph,
            journal,
            goals,
            recommender,
        };
        let dialog = Arc::new(dialog);
        let scheduler = Scheduler::new(store.clone(), svc.clone(), dialog.clone(), scheduler)?;
        scheduler.start(clock.now())?;
        Ok(Engine {
            store,
            clock,
            nlu,
            dialog,
            svc,
            scheduler,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.svc.graph
    }

    pub fn services(&self) -> &Services {
        &self.svc
    }

    pub fn nlu(&self) -> &Nlu {
        &self.nlu
    }

    pub fn dialog(&self) -> &Dialog {
        &self.dialog
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    /// Registers a user, optionally with the default goals.
    pub fn create_user(
        &self,
        user_id: &str,
        display_name: &str,
        tz_offset_minutes: i32,
        with_defaults: bool,
    ) -> Result<UserProfile> {
        let id = UserId::new(user_id);
        users::validate_user_id(&id)?;
        let now = self.now();
        let profile = UserProfile::new(id, display_name, tz_offset_minutes, now)?;
        users::create_user(&self.store, &profile)?;
        if with_defaults {
            self.svc.goals.install_defaults(&profile.user_id, now)?;
        }
        Ok(profile)
    }

    pub fn user(&self, id: &UserId) -> Result<UserProfile> {
        users::get_user(&self.store, id)
    }

    pub fn open_session(&self, user_id: &UserId) -> Result<Session> {
        self.user(user_id)?;
        let mut bytes = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        let token: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        let now = self.now();
        self.store.transact(Family::Sessions, |txn| {
            let session = Session {
                token: token.clone(),
                session_id: format!("s{:08}", txn.next_seq()?),
                user_id: user_id.clone(),
                created_at: now,
            };
            txn.put(&session_key(&token), &session)?;
            Ok(session)
        })
    }

    /// The session and user behind a bearer token.
    pub fn authorize(&self, token: &str) -> Result<(Session, UserProfile)> {
        let bad = || Error::Unauthorized("unknown session token".into());
        if token.is_empty() || token.len() > 128 || !token.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(bad());
        }
        let session: Session = self.store.get(Family::Sessions, &session_key(token))?.ok_or_else(bad)?;
        let user = self.user(&session.user_id)?;
        Ok((session, user))
    }

    pub fn dialog_state(&self, session: &Session) -> Result<DialogState> {
        Ok(self
            .store
            .get(Family::States, &state_key(&session.session_id))?
            .unwrap_or_else(|| {
                DialogState::new(session.session_id.clone(), session.user_id.clone(), session.created_at)
            }))
    }

    fn session_lock(&self, session_id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().entry(session_id.to_string()).or_default().clone()
    }

    pub fn chat(&self, token: &str, req: &ChatRequest) -> Result<ChatReply> {
        let (session, user) = self.authorize(token)?;
        req.validate()?;
        let lock = self.session_lock(&session.session_id);
        let _g = lock.lock();

        let turn_id = match &req.turn_id {
            Some(t) => t.clone(),
            None => format!("auto-{:08}", self.store.transact(Family::Turns, |txn| txn.next_seq())?),
        };
        let rkey = turn_key(&session.session_id, &turn_id);
        if let Some(rec) = self.store.get::<TurnRecord>(Family::Turns, &rkey)? {
            if !rec.done {
                self.finish(&user, &session, &rkey, rec.clone())?;
            }
            return Ok(rec.reply);
        }

        let now = self.now();
        let state = self.dialog_state(&session)?;
        let parse = match (&req.text, req.option_index) {
            (_, Some(i)) => ParseResult::select(i),
            (Some(text), None) => self.nlu.parse_in_context(text, self.dialog.expectation(&state, now)),
            (None, None) => unreachable!("validated"),
        };
        let turn = Turn {
            // Journal idempotency keys are per user, so scope them by session.
            turn_id: format!("{}.{turn_id}", session.session_id),
            now,
        };
        let outcome = match self.dialog.step(&state, &parse, &turn, &user, &self.svc) {
            Ok(o) => o,
            Err(e) => {
                tracing::error!(session = %session.session_id, error = %e, "dialog step failed");
                return self.apology(&state, &turn_id, parse.intent);
            }
        };
        let rec = TurnRecord {
            reply: ChatReply {
                response: outcome.response,
                context: outcome.state.active_context,
                turn_id: turn_id.clone(),
                intent: parse.intent,
            },
            commands: outcome.commands,
            state: outcome.state,
            done: false,
        };
        self.store.put(Family::Turns, &rkey, &rec)?;
        self.store
            .put(Family::States, &state_key(&session.session_id), &rec.state)?;
        match self.run_commands(&user, &rec.commands, now) {
            Ok(()) => {
                self.store.put(
                    Family::Turns,
                    &rkey,
                    &TurnRecord {
                        done: true,
                        ..rec.clone()
                    },
                )?;
                Ok(rec.reply)
            }
            Err(e) => {
                tracing::error!(session = %session.session_id, error = %e, "command failed; state restored");
                self.store
                    .put(Family::States, &state_key(&session.session_id), &state)?;
                self.store.delete(Family::Turns, &rkey)?;
                self.apology(&state, &turn_id, parse.intent)
            }
        }
    }

    /// Completes a turn interrupted after its record was written.
    fn finish(&self, user: &UserProfile, session: &Session, rkey: &str, rec: TurnRecord) -> Result<()> {
        let key = state_key(&session.session_id);
        let current: Option<DialogState> = self.store.get(Family::States, &key)?;
        if current.is_none_or(|c| c.updated_at <= rec.state.updated_at) {
            self.store.put(Family::States, &key, &rec.state)?;
        }
        self.run_commands(user, &rec.commands, rec.state.updated_at)?;
        self.store.put(Family::Turns, rkey, &TurnRecord { done: true, ..rec })
    }

    fn run_commands(&self, user: &UserProfile, commands: &[Command], now: DateTime<Utc>) -> Result<()> {
        commands.iter().try_for_each(|c| self.svc.apply(user, c, now))
    }

    fn apology(&self, state: &DialogState, turn_id: &str, intent: Intent) -> Result<ChatReply> {
        Ok(ChatReply {
            response: self.dialog.render("apology", &[])?,
            context: state.active_context,
            turn_id: turn_id.to_string(),
            intent,
        })
    }

    /// Entries on a local day (today by default), ascending.
    pub fn journal_day(&self, user: &UserProfile, day: Option<NaiveDate>) -> Result<Vec<JournalEntry>> {
        let day = day.unwrap_or_else(|| user.local_day(self.now()));
        self.svc.journal.entries_on(user, day)
    }

    pub fn edit_entry(&self, user: &UserProfile, entry_id: &str, patch: &EntryPatch) -> Result<JournalEntry> {
        self.svc.journal.edit_entry(user, entry_id, patch)
    }

    pub fn delete_entry(&self, user: &UserProfile, entry_id: &str) -> Result<JournalEntry> {
        self.svc.journal.delete_entry(user, entry_id)
    }

    pub fn progress(&self, user: &UserProfile) -> Result<Vec<ProgressReport>> {
        self.svc.goals.progress_all(user, self.now())
    }

    pub fn set_goal(&self, user: &UserProfile, template: GoalTemplate) -> Result<crate::goals::Goal> {
        self.svc.goals.set_goal(&user.user_id, template, self.now())
    }

    pub fn weekly_report(&self, user: &UserProfile, week: Option<NaiveDate>) -> Result<WeeklyReport> {
        let now = self.now();
        let week = week.unwrap_or_else(|| user.local_day(now));
        self.svc.goals.weekly_report(user, week, now)
    }

    pub fn recommendations(
        &self,
        user: &UserProfile,
        meal: Option<MealOccasion>,
        k: Option<usize>,
    ) -> Result<Vec<ScoredCandidate>> {
        use chrono::Timelike;
        let now = self.now();
        let meal = meal.unwrap_or_else(|| MealOccasion::for_local_hour(user.local(now).hour()));
        self.svc
            .recommend_for(user, meal, k.unwrap_or(self.svc.recommender.k), now)
    }

    pub fn add_examples(&self, examples: &[TrainingExample]) -> Result<usize> {
        self.nlu.add_examples(examples, Some(&self.store))
    }

    pub fn tick(&self) -> Result<Vec<NotificationPrompt>> {
        self.scheduler.tick(self.now())
    }

    pub fn outbox(&self, user: &UserId) -> Result<Vec<NotificationPrompt>> {
        self.scheduler.outbox(user, self.now())
    }

    pub fn mark_delivered(&self, user: &UserId, prompt_id: &str) -> Result<()> {
        self.scheduler.mark_delivered(user, prompt_id)
    }
}

#[cfg(test)]
mod tests;
