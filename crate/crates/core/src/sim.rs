//! Clock-stepped simulation driven by a line-oriented script.
//!
//! ```text
//! # comment
//! start 2024-01-07T16:00:00Z        # optional, before anything else
//! user ana +08:00                    # default goals; add `no-goals` to skip
//! advance 1d 2h                      # durations as in `30m`, `1h 15m`, `2d`
//! chat ana I had laksa for lunch     # one turn, then the clock moves 1 s
//! tap ana 2                          # select card 2
//! expect-prompt ana midweek_fish     # claims the oldest unclaimed match
//! expect-no-prompt ana [policy]      # no unclaimed prompt (of that policy)
//! ```
//!
//! The scheduler is ticked up to the current instant before every chat
//! turn and expectation, and at the end of every `advance`, so prompts are
//! evaluated against exactly the writes that precede their trigger time.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use crate::clock::{Clock, VirtualClock};
use crate::engine::{ChatRequest, Engine, EngineParts};
use crate::error::{Error, Result};
use crate::goals::ProgressReport;
use crate::graph::KnowledgeGraph;
use crate::jit::NotificationPrompt;
use crate::journal::JournalEntry;
use crate::store::Store;
use crate::users::{parse_tz_offset, UserProfile};

/// Monday 2024-01-08 00:00 at UTC+8.
pub const DEFAULT_START: &str = "2024-01-07T16:00:00Z";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Start(DateTime<Utc>),
    User {
        id: String,
        tz_minutes: i32,
        defaults: bool,
    },
    Advance(Duration),
    Chat {
        user: String,
        text: String,
    },
    Tap {
        user: String,
        option: u32,
    },
    ExpectPrompt {
        user: String,
        policy: String,
    },
    ExpectNoPrompt {
        user: String,
        policy: Option<String>,
    },
}

/// Parses a script into `(line number, step)` pairs.
pub fn parse_script(text: &str) -> Result<Vec<(usize, Step)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::validation(format!("line {n}: {msg}"));
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let words: Vec<&str> = rest.split_whitespace().collect();
        let step = match cmd {
            "start" => Step::Start(rest.parse().map_err(|_| bad("start needs an RFC 3339 timestamp"))?),
            "user" => {
                let (id, opts) = words.split_first().ok_or_else(|| bad("user needs an id"))?;
                let mut tz_minutes = 480;
                let mut defaults = true;
                for o in opts {
                    match *o {
                        "no-goals" => defaults = false,
                        tz => tz_minutes = parse_tz_offset(tz).map_err(|e| bad(&e.to_string()))?,
                    }
                }
                Step::User {
                    id: id.to_string(),
                    tz_minutes,
                    defaults,
                }
            }
            "advance" => {
                let d = humantime::parse_duration(rest).map_err(|e| bad(&format!("bad duration: {e}")))?;
                Step::Advance(Duration::from_std(d).map_err(|_| bad("duration too large"))?)
            }
            "chat" => {
                let (user, text) = rest
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| bad("chat needs a user and text"))?;
                Step::Chat {
                    user: user.to_string(),
                    text: text.trim().to_string(),
                }
            }
            "tap" => match words.as_slice() {
                [user, k] => Step::Tap {
                    user: user.to_string(),
                    option: k.parse().map_err(|_| bad("tap needs an option number"))?,
                },
                _ => return Err(bad("tap needs a user and an option number")),
            },
            "expect-prompt" => match words.as_slice() {
                [user, policy] => Step::ExpectPrompt {
                    user: user.to_string(),
                    policy: policy.to_string(),
                },
                _ => return Err(bad("expect-prompt needs a user and a policy")),
            },
            "expect-no-prompt" => match words.as_slice() {
                [user] => Step::ExpectNoPrompt {
                    user: user.to_string(),
                    policy: None,
                },
                [user, policy] => Step::ExpectNoPrompt {
                    user: user.to_string(),
                    policy: Some(policy.to_string()),
                },
                _ => return Err(bad("expect-no-prompt needs a user and optionally a policy")),
            },
            other => return Err(bad(&format!("unknown command `{other}`"))),
        };
        if matches!(step, Step::Start(_)) && !out.is_empty() {
            return Err(bad("start must come first"));
        }
        out.push((n, step));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptLine {
    pub at: DateTime<Utc>,
    pub user: String,
    pub said: String,
    pub reply: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct UserDump {
    pub profile: UserProfile,
    pub entries: Vec<JournalEntry>,
    pub progress: Vec<ProgressReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    /// Scheduler export, one JSON object per line.
    pub prompt_log: Vec<String>,
    pub transcript: Vec<TranscriptLine>,
    pub failures: Vec<String>,
    pub end: DateTime<Utc>,
    pub users: BTreeMap<String, UserDump>,
}

impl SimReport {
    pub fn prompt_log_text(&self) -> String {
        self.prompt_log.iter().map(|l| format!("{l}\n")).collect()
    }
}

pub struct Simulation {
    clock: VirtualClock,
    engine: Engine,
    tokens: BTreeMap<String, String>,
    emitted: Vec<(NotificationPrompt, bool)>,
    transcript: Vec<TranscriptLine>,
    failures: Vec<String>,
    started: bool,
}

impl Simulation {
    /// Fresh in-memory store at `start`, shipped configuration.
    pub fn new(graph: Arc<KnowledgeGraph>, start: DateTime<Utc>) -> Result<Simulation> {
        Self::with_parts(start, |store, clock| EngineParts::shipped(store, graph, clock))
    }

    /// Like [`Simulation::new`] with caller-built engine parts.
    pub fn with_parts(
        start: DateTime<Utc>,
        parts: impl FnOnce(Arc<Store>, Arc<dyn Clock>) -> EngineParts,
    ) -> Result<Simulation> {
        let clock = VirtualClock::new(start);
        let engine = Engine::new(parts(Arc::new(Store::in_memory()), Arc::new(clock.clone())))?;
        Ok(Simulation {
            clock,
            engine,
            tokens: BTreeMap::new(),
            emitted: Vec::new(),
            transcript: Vec::new(),
            failures: Vec::new(),
            started: false,
        })
    }

    /// Parses a script and builds a simulation at its `start` (or the
    /// default start).
    pub fn from_script(graph: Arc<KnowledgeGraph>, script: &str) -> Result<(Simulation, Vec<(usize, Step)>)> {
        let steps = parse_script(script)?;
        let start = match steps.first() {
            Some((_, Step::Start(t))) => *t,
            _ => DEFAULT_START.parse().expect("valid default start"),
        };
        Ok((Simulation::new(graph, start)?, steps))
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// Every prompt emitted so far, in emission order.
    pub fn emitted(&self) -> impl Iterator<Item = &NotificationPrompt> {
        self.emitted.iter().map(|(p, _)| p)
    }

    pub fn failures(&self) -> &[String] {
        &self.failures
    }

    pub fn tick(&mut self) -> Result<()> {
        let fresh = self.engine.tick()?;
        self.emitted.extend(fresh.into_iter().map(|p| (p, false)));
        Ok(())
    }

    pub fn add_user(&mut self, id: &str, tz_minutes: i32, defaults: bool) -> Result<()> {
        self.tick()?;
        let profile = self.engine.create_user(id, id, tz_minutes, defaults)?;
        let session = self.engine.open_session(&profile.user_id)?;
        self.tokens.insert(id.to_string(), session.token);
        Ok(())
    }

    pub fn advance(&mut self, by: Duration) -> Result<()> {
        self.clock.advance(by);
        self.tick()
    }

    /// Moves the clock to `to` (never backwards) and ticks.
    pub fn advance_to(&mut self, to: DateTime<Utc>) -> Result<()> {
        self.clock.set(to);
        self.tick()
    }

    /// Runs one turn and returns the reply text.
    pub fn chat(&mut self, user: &str, req: ChatRequest) -> Result<String> {
        self.tick()?;
        let token = self
            .tokens
            .get(user)
            .ok_or_else(|| Error::not_found(format!("simulated user `{user}`")))?;
        let said = match (&req.text, req.option_index) {
            (Some(t), _) => t.clone(),
            (None, Some(i)) => format!("[tap {i}]"),
            (None, None) => String::new(),
        };
        let reply = self.engine.chat(token, &req)?;
        self.transcript.push(TranscriptLine {
            at: self.now(),
            user: user.to_string(),
            said,
            reply: reply.response.text.clone(),
        });
        self.clock.advance(Duration::seconds(1));
        Ok(reply.response.text)
    }

    /// Claims the oldest unclaimed prompt for `user` of `policy`.
    pub fn claim(&mut self, user: &str, policy: &str) -> Result<Option<NotificationPrompt>> {
        self.tick()?;
        Ok(self
            .emitted
            .iter_mut()
            .find(|(p, claimed)| !*claimed && p.user_id.as_str() == user && p.policy_id == policy)
            .map(|(p, claimed)| {
                *claimed = true;
                p.clone()
            }))
    }

    pub fn unclaimed(&mut self, user: &str, policy: Option<&str>) -> Result<Vec<NotificationPrompt>> {
        self.tick()?;
        Ok(self
            .emitted
            .iter()
            .filter(|(p, claimed)| {
                !*claimed && p.user_id.as_str() == user && policy.is_none_or(|pol| p.policy_id == pol)
            })
            .map(|(p, _)| p.clone())
            .collect())
    }

    /// Runs parsed steps. Expectation failures are collected, not raised.
    pub fn run(&mut self, steps: &[(usize, Step)]) -> Result<()> {
        for (n, step) in steps {
            let at = |e: Error| Error::validation(format!("line {n}: {e}"));
            match step {
                Step::Start(t) => {
                    if self.started || *t < self.now() {
                        return Err(at(Error::validation(
                            "start must come first and not move the clock back",
                        )));
                    }
                    self.advance_to(*t).map_err(at)?;
                }
                Step::User {
                    id,
                    tz_minutes,
                    defaults,
                } => self.add_user(id, *tz_minutes, *defaults).map_err(at)?,
                Step::Advance(d) => self.advance(*d).map_err(at)?,
                Step::Chat { user, text } => {
                    self.chat(user, ChatRequest::text(text.clone())).map_err(at)?;
                }
                Step::Tap { user, option } => {
                    self.chat(user, ChatRequest::option(*option)).map_err(at)?;
                }
                Step::ExpectPrompt { user, policy } => {
                    if self.claim(user, policy).map_err(at)?.is_none() {
                        self.failures
                            .push(format!("line {n}: expected a `{policy}` prompt for {user}"));
                    }
                }
                Step::ExpectNoPrompt { user, policy } => {
                    let left = self.unclaimed(user, policy.as_deref()).map_err(at)?;
                    if !left.is_empty() {
                        let ids: Vec<String> = left
                            .iter()
                            .map(|p| format!("{}@{}", p.policy_id, p.created_at))
                            .collect();
                        self.failures
                            .push(format!("line {n}: unexpected prompts for {user}: {}", ids.join(", ")));
                    }
                }
            }
            self.started = true;
        }
        Ok(())
    }

    pub fn report(&self) -> Result<SimReport> {
        let now = self.now();
        let mut users = BTreeMap::new();
        for id in self.tokens.keys() {
            let profile = self.engine.user(&crate::types::UserId::new(id.as_str()))?;
            let entries = self.engine.services().journal.list_entries(
                &profile,
                profile.created_at,
                now + Duration::seconds(1),
                None,
            )?;
            let progress = self.engine.progress(&profile)?;
            users.insert(
                id.clone(),
                UserDump {
                    profile,
                    entries,
                    progress,
                },
            );
        }
        Ok(SimReport {
            prompt_log: self.engine.scheduler().export_log()?,
            transcript: self.transcript.clone(),
            failures: self.failures.clone(),
            end: now,
            users,
        })
    }
}

/// Parses, runs and reports a script over `graph`.
pub fn run_script(graph: Arc<KnowledgeGraph>, script: &str) -> Result<SimReport> {
    let (mut sim, steps) = Simulation::from_script(graph, script)?;
    sim.run(&steps)?;
    sim.report()
}
