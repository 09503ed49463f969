//! Clock-driven prompt policies with per-day deduplication and a fatigue cap.
//!
//! A tick covers trigger instants in `(last_tick, now]`. Triggers are
//! handled in time order, higher priority first at equal times, and every
//! condition is evaluated as of its trigger instant, so one long tick and
//! many short ones emit the same prompts.
//!
//! The cap is enforced online: a prompt is emitted only if the day's count
//! plus the number of later, higher-priority triggers that may still fire
//! that day stays under the cap. Lower-priority prompts are thus the ones
//! dropped when a day is crowded.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, Utc, Weekday};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::dialog::{progress_line, recommendation_cards, BotResponse, Dialog};
use crate::error::{Error, Result};
use crate::goals::{count_toward, Goal};
use crate::journal::JournalEntry;
use crate::services::Services;
use crate::store::{Family, Store};
use crate::types::{CategoryLabel, Direction, MealOccasion, Period, UserId};
use crate::users::{list_users, week_start, UserProfile};

pub const DEFAULT_POLICIES: &str = include_str!("../data/policies.toml");

const LAST_TICK_KEY: &str = "meta/last_tick";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    LogReminder,
    GoalGap,
    MidweekCheck,
    MealRecommendation,
    WeeklyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPolicy {
    pub policy_id: String,
    pub kind: PolicyKind,
    /// User-local trigger time.
    pub time: NaiveTime,
    pub weekday: Option<Weekday>,
    /// Gap fraction above which a goal counts as behind.
    pub threshold: f64,
    pub priority: i32,
    pub enabled: bool,
    /// Occasion for meal recommendation pushes.
    pub meal: Option<MealOccasion>,
}

impl PromptPolicy {
    fn runs_on(&self, day: NaiveDate) -> bool {
        self.enabled && self.weekday.is_none_or(|w| day.weekday() == w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub fatigue_cap: usize,
    pub outbox_ttl_hours: i64,
    pub policies: Vec<PromptPolicy>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_cap")]
    fatigue_cap: usize,
    #[serde(default = "default_ttl")]
    outbox_ttl_hours: i64,
    #[serde(default)]
    policy: Vec<RawPolicy>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    policy_id: String,
    kind: PolicyKind,
    time: String,
    weekday: Option<String>,
    #[serde(default = "default_threshold")]
    threshold: f64,
    priority: i32,
    #[serde(default = "default_enabled")]
    enabled: bool,
    meal: Option<MealOccasion>,
}

fn default_cap() -> usize {
    3
}
fn default_ttl() -> i64 {
    24
}
fn default_threshold() -> f64 {
    0.25
}
fn default_enabled() -> bool {
    true
}

impl SchedulerConfig {
    pub fn parse(text: &str) -> Result<SchedulerConfig> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(format!("policies: {e}")))?;
        let mut policies = Vec::new();
        for p in raw.policy {
            let bad = |m: String| Error::Config(format!("policy `{}`: {m}", p.policy_id));
            let time =
                NaiveTime::parse_from_str(&p.time, "%H:%M").map_err(|e| bad(format!("time `{}`: {e}", p.time)))?;
            let weekday = p
                .weekday
                .as_deref()
                .map(|w| w.parse::<Weekday>().map_err(|_| bad(format!("weekday `{w}`"))))
                .transpose()?;
            policies.push(PromptPolicy {
                policy_id: p.policy_id.clone(),
                kind: p.kind,
                time,
                weekday,
                threshold: p.threshold,
                priority: p.priority,
                enabled: p.enabled,
                meal: p.meal,
            });
        }
        let cfg = SchedulerConfig {
            fatigue_cap: raw.fatigue_cap,
            outbox_ttl_hours: raw.outbox_ttl_hours,
            policies,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SchedulerConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("read policies {}: {e}", path.display())))?;
        SchedulerConfig::parse(&text)
    }

    pub fn shipped() -> SchedulerConfig {
        SchedulerConfig::parse(DEFAULT_POLICIES).expect("shipped policies parse")
    }

    pub fn validate(&self) -> Result<()> {
        if self.fatigue_cap < 1 {
            return Err(Error::Config("fatigue_cap must be at least 1".into()));
        }
        if self.outbox_ttl_hours < 1 {
            return Err(Error::Config("outbox_ttl_hours must be at least 1".into()));
        }
        let mut ids = BTreeSet::new();
        for p in &self.policies {
            let bad = |m: &str| Err(Error::Config(format!("policy `{}`: {m}", p.policy_id)));
            if p.policy_id.is_empty() || p.policy_id.contains('/') {
                return bad("id must be non-empty without '/'");
            }
            if !ids.insert(p.policy_id.as_str()) {
                return bad("duplicate id");
            }
            if !(p.threshold > 0.0 && p.threshold <= 1.0) {
                return bad("threshold must be within (0, 1]");
            }
            if (p.kind == PolicyKind::MealRecommendation) != p.meal.is_some() {
                return bad("meal is required for, and only for, meal recommendations");
            }
        }
        Ok(())
    }

    pub fn policy(&self, id: &str) -> Option<&PromptPolicy> {
        self.policies.iter().find(|p| p.policy_id == id)
    }

    /// Enables or disables a policy by id.
    pub fn set_enabled(&mut self, id: &str, enabled: bool) -> Result<()> {
        let p = self
            .policies
            .iter_mut()
            .find(|p| p.policy_id == id)
            .ok_or_else(|| Error::not_found(format!("policy `{id}`")))?;
        p.enabled = enabled;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationPrompt {
    pub prompt_id: String,
    pub user_id: UserId,
    pub policy_id: String,
    pub kind: PolicyKind,
    /// The trigger instant.
    pub created_at: DateTime<Utc>,
    pub local_day: NaiveDate,
    pub payload: BotResponse,
    pub delivered: bool,
}

fn prompt_key(user: &UserId, seq: u64) -> String {
    format!("p/{user}/{seq:010}")
}

fn dedup_key(user: &UserId, day: NaiveDate, policy: &str) -> String {
    format!("k/{user}/{day}/{policy}")
}

struct Trigger<'a> {
    at: DateTime<Utc>,
    day: NaiveDate,
    policy: &'a PromptPolicy,
}

pub struct Scheduler {
    store: Arc<Store>,
    svc: Services,
    dialog: Arc<Dialog>,
    config: SchedulerConfig,
    /// Serializes ticks.
    tick_lock: Mutex<()>,
}

impl Scheduler {
    pub fn new(store: Arc<Store>, svc: Services, dialog: Arc<Dialog>, config: SchedulerConfig) -> Result<Scheduler> {
        config.validate()?;
        Ok(Scheduler {
            store,
            svc,
            dialog,
            config,
            tick_lock: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn last_tick(&self) -> Result<Option<DateTime<Utc>>> {
        self.store.get(Family::Prompts, LAST_TICK_KEY)
    }

    /// Sets the tick origin if none is recorded, so a fresh deployment does
    /// not emit prompts for times before it started.
    pub fn start(&self, now: DateTime<Utc>) -> Result<DateTime<Utc>> {
        let _g = self.tick_lock.lock();
        match self.last_tick()? {
            Some(t) => Ok(t),
            None => {
                self.store.put(Family::Prompts, LAST_TICK_KEY, &now)?;
                Ok(now)
            }
        }
    }

    /// Evaluates every trigger in `(last_tick, now]` for every user and
    /// returns the emitted prompts in creation order. A clock that has not
    /// moved forward emits nothing.
    pub fn tick(&self, now: DateTime<Utc>) -> Result<Vec<NotificationPrompt>> {
        let _g = self.tick_lock.lock();
        let Some(last) = self.last_tick()? else {
            self.store.put(Family::Prompts, LAST_TICK_KEY, &now)?;
            return Ok(Vec::new());
        };
        if now <= last {
            return Ok(Vec::new());
        }
        // Global time order keeps prompt ids independent of tick size.
        let users = list_users(&self.store)?;
        let mut triggers: Vec<(&UserProfile, Trigger<'_>)> = users
            .iter()
            .flat_map(|u| self.triggers(u, last, now).into_iter().map(move |t| (u, t)))
            .collect();
        triggers.sort_by(|(ua, a), (ub, b)| {
            a.at.cmp(&b.at)
                .then_with(|| ua.user_id.cmp(&ub.user_id))
                .then_with(|| b.policy.priority.cmp(&a.policy.priority))
                .then_with(|| a.policy.policy_id.cmp(&b.policy.policy_id))
        });
        let mut out = Vec::new();
        for (user, t) in triggers {
            if let Some(p) = self.fire(user, &t)? {
                out.push(p);
            }
        }
        self.store.put(Family::Prompts, LAST_TICK_KEY, &now)?;
        Ok(out)
    }

    fn triggers(&self, user: &UserProfile, last: DateTime<Utc>, now: DateTime<Utc>) -> Vec<Trigger<'_>> {
        let mut out = Vec::new();
        let mut day = user.local_day(last);
        let end = user.local_day(now);
        while day <= end {
            for p in self.config.policies.iter().filter(|p| p.runs_on(day)) {
                let at = user.at_local(day, p.time);
                if at > last && at <= now && at >= user.created_at {
                    out.push(Trigger { at, day, policy: p });
                }
            }
            day = day.succ_opt().expect("date in range");
        }
        out.sort_by(|a, b| {
            a.at.cmp(&b.at)
                .then_with(|| b.policy.priority.cmp(&a.policy.priority))
                .then_with(|| a.policy.policy_id.cmp(&b.policy.policy_id))
        });
        out
    }

    fn fire(&self, user: &UserProfile, t: &Trigger<'_>) -> Result<Option<NotificationPrompt>> {
        if self
            .store
            .get::<String>(Family::Prompts, &dedup_key(&user.user_id, t.day, &t.policy.policy_id))?
            .is_some()
        {
            return Ok(None);
        }
        let sent = self.sent_on(&user.user_id, t.day)?;
        if sent.len() >= self.config.fatigue_cap {
            tracing::debug!(user = %user.user_id, policy = %t.policy.policy_id, "fatigue cap reached");
            return Ok(None);
        }
        let Some(payload) = self.evaluate(user, t.policy, t.at)? else {
            return Ok(None);
        };
        let reserved = self.reserved(user, t, &sent)?;
        if sent.len() + reserved >= self.config.fatigue_cap {
            tracing::debug!(user = %user.user_id, policy = %t.policy.policy_id, reserved, "held back for higher priority");
            return Ok(None);
        }
        self.emit(user, t, payload).map(Some)
    }

    /// Policy ids already emitted for the user on `day`.
    fn sent_on(&self, user: &UserId, day: NaiveDate) -> Result<BTreeSet<String>> {
        let prefix = format!("k/{user}/{day}/");
        Ok(self
            .store
            .scan::<String>(Family::Prompts, &prefix)?
            .into_iter()
            .map(|(k, _)| k[prefix.len()..].to_string())
            .collect())
    }

    /// Later same-day triggers of higher priority that may still fire.
    fn reserved(&self, user: &UserProfile, t: &Trigger<'_>, sent: &BTreeSet<String>) -> Result<usize> {
        let mut n = 0;
        for p in self.config.policies.iter().filter(|p| p.runs_on(t.day)) {
            if p.priority <= t.policy.priority || sent.contains(&p.policy_id) || user.at_local(t.day, p.time) <= t.at {
                continue;
            }
            let possible = match p.kind {
                // These can only become false as the day goes on.
                PolicyKind::LogReminder | PolicyKind::MidweekCheck | PolicyKind::MealRecommendation => {
                    self.condition(user, p, t.at)?
                }
                PolicyKind::GoalGap | PolicyKind::WeeklyReport => {
                    !self.svc.goals.active_goals_at(&user.user_id, t.at)?.is_empty()
                }
            };
            n += possible as usize;
        }
        Ok(n)
    }

    fn entries(&self, user: &UserProfile, start: DateTime<Utc>, at: DateTime<Utc>) -> Result<Vec<JournalEntry>> {
        self.svc.journal.list_entries(user, start, at, None)
    }

    /// Cheap condition check, without building a payload.
    fn condition(&self, user: &UserProfile, p: &PromptPolicy, at: DateTime<Utc>) -> Result<bool> {
        let day_start = user.day_start(user.local_day(at));
        Ok(match p.kind {
            PolicyKind::LogReminder => self.entries(user, day_start, at)?.is_empty(),
            PolicyKind::MidweekCheck => self.fish_missing(user, at)?,
            PolicyKind::MealRecommendation => {
                let meal = p.meal.expect("validated");
                !self.meal_logged(user, meal, at)?
            }
            PolicyKind::GoalGap | PolicyKind::WeeklyReport => true,
        })
    }

    fn meal_logged(&self, user: &UserProfile, meal: MealOccasion, at: DateTime<Utc>) -> Result<bool> {
        let day_start = user.day_start(user.local_day(at));
        Ok(self
            .entries(user, day_start, at)?
            .iter()
            .filter_map(JournalEntry::as_food)
            .any(|f| f.meal_occasion == meal))
    }

    fn fish_missing(&self, user: &UserProfile, at: DateTime<Utc>) -> Result<bool> {
        let goals = self.svc.goals.active_goals_at(&user.user_id, at)?;
        if !goals.iter().any(|g| g.goal_type == CategoryLabel::Fish) {
            return Ok(false);
        }
        let start = user.day_start(week_start(user.local_day(at)));
        let entries = self.entries(user, start, at)?;
        Ok(count_toward(&self.svc.graph, &entries, CategoryLabel::Fish) == 0)
    }

    /// Payload if the policy's condition holds at `at`.
    pub fn evaluate(&self, user: &UserProfile, p: &PromptPolicy, at: DateTime<Utc>) -> Result<Option<BotResponse>> {
        match p.kind {
            PolicyKind::LogReminder => {
                if !self.condition(user, p, at)? {
                    return Ok(None);
                }
                self.dialog.render("prompt_log_reminder", &[]).map(Some)
            }
            PolicyKind::GoalGap => self.goal_gap(user, at, p.threshold),
            PolicyKind::MidweekCheck => {
                if !self.fish_missing(user, at)? {
                    return Ok(None);
                }
                self.dialog.render("prompt_midweek_fish", &[]).map(Some)
            }
            PolicyKind::MealRecommendation => {
                let meal = p.meal.expect("validated");
                if self.meal_logged(user, meal, at)? {
                    return Ok(None);
                }
                let recs = self.svc.recommend_for(user, meal, self.svc.recommender.k, at)?;
                if recs.is_empty() {
                    return Ok(None);
                }
                let resp = self
                    .dialog
                    .render("prompt_meal_recommendation", &[("meal", meal.to_string())])?;
                Ok(Some(resp.cards(recommendation_cards(&self.svc.graph, &recs))))
            }
            PolicyKind::WeeklyReport => {
                if self.svc.goals.active_goals_at(&user.user_id, at)?.is_empty() {
                    return Ok(None);
                }
                let report = self.svc.goals.weekly_report(user, user.local_day(at), at)?;
                let items = report.reports.iter().map(progress_line).collect::<Vec<_>>().join("\n");
                self.dialog
                    .render(
                        "prompt_weekly_report",
                        &[
                            ("attained", report.attained_count.to_string()),
                            ("total", report.goal_count.to_string()),
                            ("items", items),
                        ],
                    )
                    .map(Some)
            }
        }
    }

    /// Goals due at `at` that are behind: daily goals every day, weekly
    /// goals on the week's last day (Sunday).
    pub fn goals_behind(
        &self,
        user: &UserProfile,
        at: DateTime<Utc>,
        threshold: f64,
    ) -> Result<Vec<crate::goals::ProgressReport>> {
        let day = user.local_day(at);
        let mut out = Vec::new();
        for g in self.svc.goals.active_goals_at(&user.user_id, at)? {
            if !is_due(&g, day) {
                continue;
            }
            let r = self.svc.goals.compute_progress(user, &g, at)?;
            let behind = match r.direction {
                Direction::AtLeast => r.gap_fraction() > threshold,
                Direction::AtMost => r.current > r.target,
            };
            if behind {
                out.push(r);
            }
        }
        Ok(out)
    }

    fn goal_gap(&self, user: &UserProfile, at: DateTime<Utc>, threshold: f64) -> Result<Option<BotResponse>> {
        let behind = self.goals_behind(user, at, threshold)?;
        if behind.is_empty() {
            return Ok(None);
        }
        let items = behind.iter().map(progress_line).collect::<Vec<_>>().join("\n");
        self.dialog.render("prompt_goal_gap", &[("items", items)]).map(Some)
    }

    fn emit(&self, user: &UserProfile, t: &Trigger<'_>, payload: BotResponse) -> Result<NotificationPrompt> {
        self.store.transact(Family::Prompts, |txn| {
            let seq = txn.next_seq()?;
            let prompt = NotificationPrompt {
                prompt_id: format!("p{seq:08}"),
                user_id: user.user_id.clone(),
                policy_id: t.policy.policy_id.clone(),
                kind: t.policy.kind,
                created_at: t.at,
                local_day: t.day,
                payload,
                delivered: false,
            };
            txn.put(&prompt_key(&user.user_id, seq), &prompt)?;
            txn.put(&dedup_key(&user.user_id, t.day, &t.policy.policy_id), &prompt.prompt_id)?;
            Ok(prompt)
        })
    }

    /// All prompts for a user, oldest first.
    pub fn prompts_for(&self, user: &UserId) -> Result<Vec<NotificationPrompt>> {
        Ok(self
            .store
            .scan::<NotificationPrompt>(Family::Prompts, &format!("p/{user}/"))?
            .into_iter()
            .map(|(_, p)| p)
            .collect())
    }

    /// Undelivered prompts younger than the outbox TTL, oldest first.
    pub fn outbox(&self, user: &UserId, now: DateTime<Utc>) -> Result<Vec<NotificationPrompt>> {
        let cutoff = now - Duration::hours(self.config.outbox_ttl_hours);
        Ok(self
            .prompts_for(user)?
            .into_iter()
            .filter(|p| !p.delivered && p.created_at > cutoff)
            .collect())
    }

    pub fn mark_delivered(&self, user: &UserId, prompt_id: &str) -> Result<()> {
        let seq: u64 = prompt_id
            .strip_prefix('p')
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::validation(format!("bad prompt id `{prompt_id}`")))?;
        let key = prompt_key(user, seq);
        self.store.transact(Family::Prompts, |txn| {
            let mut p: NotificationPrompt = txn
                .get(&key)?
                .ok_or_else(|| Error::not_found(format!("prompt `{prompt_id}`")))?;
            if !p.delivered {
                p.delivered = true;
                txn.put(&key, &p)?;
            }
            Ok(())
        })
    }

    /// Every prompt as one JSON line, ordered by creation time, user, id.
    /// Delivery state is left out so the log depends only on the trace.
    pub fn export_log(&self) -> Result<Vec<String>> {
        let mut all: Vec<NotificationPrompt> = self
            .store
            .scan::<NotificationPrompt>(Family::Prompts, "p/")?
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        all.sort_by(|a, b| (a.created_at, &a.user_id, &a.prompt_id).cmp(&(b.created_at, &b.user_id, &b.prompt_id)));
        all.into_iter()
            .map(|p| {
                let line = PromptLogLine {
                    prompt_id: &p.prompt_id,
                    user_id: &p.user_id,
                    policy_id: &p.policy_id,
                    kind: p.kind,
                    created_at: p.created_at,
                    local_day: p.local_day,
                    payload: &p.payload,
                };
                serde_json::to_string(&line).map_err(|e| Error::Storage(e.to_string()))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct PromptLogLine<'a> {
    prompt_id: &'a str,
    user_id: &'a UserId,
    policy_id: &'a str,
    kind: PolicyKind,
    created_at: DateTime<Utc>,
    local_day: NaiveDate,
    payload: &'a BotResponse,
}

pub fn is_due(goal: &Goal, day: NaiveDate) -> bool {
    match goal.period {
        Period::Daily => true,
        Period::Weekly => day.weekday() == Weekday::Sun,
    }
}

#[cfg(test)]
mod tests;
