//! Intake goals, progress computation and weekly reports.

use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::journal::{Journal, JournalEntry};
use crate::store::{Family, Store};
use crate::types::{CategoryLabel, Direction, Period, UserId};
use crate::users::{week_start, UserProfile};

pub const DEFAULT_GOALS: &str = include_str!("../data/goals.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalTemplate {
    pub goal_type: CategoryLabel,
    pub target: u32,
    pub period: Period,
    pub direction: Direction,
}

impl GoalTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.goal_type == CategoryLabel::Other {
            return Err(Error::validation("goals cannot target `other`"));
        }
        if self.target < 1 {
            return Err(Error::validation("goal target must be at least 1"));
        }
        if self.goal_type == CategoryLabel::Water && self.period != Period::Daily {
            return Err(Error::validation("water goals are daily"));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct DefaultsFile {
    goal: Vec<GoalTemplate>,
}

/// Parses a defaults file of `[[goal]]` tables.
pub fn parse_defaults(text: &str) -> Result<Vec<GoalTemplate>> {
    let file: DefaultsFile = toml::from_str(text).map_err(|e| Error::Config(format!("goal defaults: {e}")))?;
    let mut seen = std::collections::BTreeSet::new();
    for g in &file.goal {
        g.validate().map_err(|e| Error::Config(format!("goal defaults: {e}")))?;
        if !seen.insert(g.goal_type) {
            return Err(Error::Config(format!("goal defaults: duplicate {}", g.goal_type)));
        }
    }
    Ok(file.goal)
}

pub fn load_defaults(path: &Path) -> Result<Vec<GoalTemplate>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("read goal defaults {}: {e}", path.display())))?;
    parse_defaults(&text)
}

/// The shipped guideline-based defaults.
pub fn default_goals() -> Vec<GoalTemplate> {
    parse_defaults(DEFAULT_GOALS).expect("shipped goal defaults parse")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub goal_id: String,
    pub user_id: UserId,
    pub goal_type: CategoryLabel,
    pub target: u32,
    pub period: Period,
    pub direction: Direction,
    pub active: bool,
    pub created_at: DateTime<Utc>,
}

impl Goal {
    pub fn template(&self) -> GoalTemplate {
        GoalTemplate {
            goal_type: self.goal_type,
            target: self.target,
            period: self.period,
            direction: self.direction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub goal_id: String,
    pub goal_type: CategoryLabel,
    pub period: Period,
    pub direction: Direction,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub current: u32,
    pub target: u32,
    pub attained: bool,
    /// target − current for at-least goals, current − target for at-most.
    pub gap: i64,
    /// Weekly reports of daily goals: days on which the goal was met.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub days_attained: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub days_elapsed: Option<u32>,
}

impl ProgressReport {
    fn new(goal: &Goal, window: (DateTime<Utc>, DateTime<Utc>), current: u32) -> Self {
        ProgressReport {
            goal_id: goal.goal_id.clone(),
            goal_type: goal.goal_type,
            period: goal.period,
            direction: goal.direction,
            window_start: window.0,
            window_end: window.1,
            current,
            target: goal.target,
            attained: attained(goal.direction, current, goal.target),
            gap: gap(goal.direction, current, goal.target),
            days_attained: None,
            days_elapsed: None,
        }
    }

    /// Shortfall relative to target, for at-least goals.
    pub fn gap_fraction(&self) -> f64 {
        self.gap as f64 / self.target as f64
    }
}

pub fn attained(direction: Direction, current: u32, target: u32) -> bool {
    match direction {
        Direction::AtLeast => current >= target,
        Direction::AtMost => current <= target,
    }
}

pub fn gap(direction: Direction, current: u32, target: u32) -> i64 {
    match direction {
        Direction::AtLeast => target as i64 - current as i64,
        Direction::AtMost => current as i64 - target as i64,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeeklyReport {
    pub week_start: NaiveDate,
    pub reports: Vec<ProgressReport>,
    pub goal_count: usize,
    pub attained_count: usize,
}

/// Servings (or glasses, for water) in `entries` counting toward `label`.
/// Unresolved entries count toward nothing; a food with several labels
/// counts toward each of them.
pub fn count_toward(graph: &KnowledgeGraph, entries: &[JournalEntry], label: CategoryLabel) -> u32 {
    entries
        .iter()
        .map(|e| match e {
            JournalEntry::Water(w) if label == CategoryLabel::Water => w.glasses,
            JournalEntry::Food(f) if label != CategoryLabel::Water => match f.food_id {
                Some(id) if graph.has_label(id, label) => f.servings,
                _ => 0,
            },
            _ => 0,
        })
        .sum()
}

/// Midpoint between the old target and observed behaviour for failed goals.
pub fn propose_adjusted_goals(reports: &[ProgressReport]) -> Vec<GoalTemplate> {
    reports
        .iter()
        .map(|r| {
            let target = if r.attained {
                r.target
            } else {
                match r.direction {
                    Direction::AtLeast => ((r.target + r.current).div_ceil(2)).max(1),
                    Direction::AtMost => (r.target + r.current).div_ceil(2),
                }
            };
            GoalTemplate {
                goal_type: r.goal_type,
                target,
                period: r.period,
                direction: r.direction,
            }
        })
        .collect()
}

fn active_key(user: &UserId, label: CategoryLabel) -> String {
    format!("a/{user}/{label}")
}

pub struct Goals {
    store: Arc<Store>,
    journal: Arc<Journal>,
    defaults: Vec<GoalTemplate>,
}

impl Goals {
    pub fn new(store: Arc<Store>, journal: Arc<Journal>, defaults: Vec<GoalTemplate>) -> Self {
        Goals {
            store,
            journal,
            defaults,
        }
    }

    pub fn defaults(&self) -> &[GoalTemplate] {
        &self.defaults
    }

    /// Activates a goal, retiring any active goal of the same type.
    pub fn set_goal(&self, user: &UserId, template: GoalTemplate, now: DateTime<Utc>) -> Result<Goal> {
        template.validate()?;
        self.store.transact(Family::Goals, |txn| {
            let key = active_key(user, template.goal_type);
            if let Some(mut old) = txn.get::<Goal>(&key)? {
                old.active = false;
                txn.put(&format!("h/{user}/{}", old.goal_id), &old)?;
            }
            let goal = Goal {
                goal_id: format!("g{:08}", txn.next_seq()?),
                user_id: user.clone(),
                goal_type: template.goal_type,
                target: template.target,
                period: template.period,
                direction: template.direction,
                active: true,
                created_at: now,
            };
            txn.put(&key, &goal)?;
            Ok(goal)
        })
    }

    /// Installs the configured defaults for goal types the user has no
    /// active goal for.
    pub fn install_defaults(&self, user: &UserId, now: DateTime<Utc>) -> Result<Vec<Goal>> {
        let mut out = Vec::new();
        for t in &self.defaults {
            if self.active_goal(user, t.goal_type)?.is_none() {
                out.push(self.set_goal(user, *t, now)?);
            }
        }
        Ok(out)
    }

    pub fn active_goal(&self, user: &UserId, label: CategoryLabel) -> Result<Option<Goal>> {
        self.store.get(Family::Goals, &active_key(user, label))
    }

    /// Active goals in label order.
    pub fn active_goals(&self, user: &UserId) -> Result<Vec<Goal>> {
        let mut goals: Vec<Goal> = self
            .store
            .scan::<Goal>(Family::Goals, &format!("a/{user}/"))?
            .into_iter()
            .map(|(_, g)| g)
            .collect();
        goals.sort_by_key(|g| g.goal_type);
        Ok(goals)
    }

    /// Goals that were active at `t`, in label order: per label, the latest
    /// goal created at or before `t`.
    pub fn active_goals_at(&self, user: &UserId, t: DateTime<Utc>) -> Result<Vec<Goal>> {
        let mut by_label: std::collections::BTreeMap<CategoryLabel, Goal> = std::collections::BTreeMap::new();
        for g in self.active_goals(user)?.into_iter().chain(self.goal_history(user)?) {
            if g.created_at > t {
                continue;
            }
            match by_label.get(&g.goal_type) {
                Some(cur) if (cur.created_at, &cur.goal_id) >= (g.created_at, &g.goal_id) => {}
                _ => {
                    by_label.insert(g.goal_type, g);
                }
            }
        }
        Ok(by_label.into_values().collect())
    }

    /// Retired goals, oldest first.
    pub fn goal_history(&self, user: &UserId) -> Result<Vec<Goal>> {
        Ok(self
            .store
            .scan::<Goal>(Family::Goals, &format!("h/{user}/"))?
            .into_iter()
            .map(|(_, g)| g)
            .collect())
    }

    /// Progress over the current local day (daily) or local week since
    /// Monday 00:00 (weekly), up to but excluding `now`.
    pub fn compute_progress(&self, user: &UserProfile, goal: &Goal, now: DateTime<Utc>) -> Result<ProgressReport> {
        let today = user.local_day(now);
        let start = match goal.period {
            Period::Daily => user.day_start(today),
            Period::Weekly => user.day_start(week_start(today)),
        };
        let entries = self.journal.list_entries(user, start, now, None)?;
        let current = count_toward(self.journal.graph(), &entries, goal.goal_type);
        Ok(ProgressReport::new(goal, (start, now), current))
    }

    pub fn progress_all(&self, user: &UserProfile, now: DateTime<Utc>) -> Result<Vec<ProgressReport>> {
        self.active_goals(&user.user_id)?
            .iter()
            .map(|g| self.compute_progress(user, g, now))
            .collect()
    }

    /// One report per active goal over the week containing `week`. Daily
    /// goals report their mean daily intake and days attained of days
    /// elapsed, and count as attained only if met on every elapsed day.
    pub fn weekly_report(&self, user: &UserProfile, week: NaiveDate, now: DateTime<Utc>) -> Result<WeeklyReport> {
        let monday = week_start(week);
        if monday > user.local_day(now) {
            return Err(Error::validation(format!("week of {monday} has not started")));
        }
        let start = user.day_start(monday);
        let end = (start + Duration::days(7)).min(now);
        let entries = self.journal.list_entries(user, start, end, None)?;
        let graph = self.journal.graph();
        let mut reports = Vec::new();
        for goal in self.active_goals_at(&user.user_id, now)? {
            let report = match goal.period {
                Period::Weekly => {
                    ProgressReport::new(&goal, (start, end), count_toward(graph, &entries, goal.goal_type))
                }
                Period::Daily => {
                    let mut total = 0u32;
                    let mut elapsed = 0u32;
                    let mut met = 0u32;
                    for d in 0..7 {
                        let day_start = start + Duration::days(d);
                        if day_start >= end {
                            break;
                        }
                        let day_end = (day_start + Duration::days(1)).min(end);
                        let day: Vec<JournalEntry> = entries
                            .iter()
                            .filter(|e| e.logged_at() >= day_start && e.logged_at() < day_end)
                            .cloned()
                            .collect();
                        let n = count_toward(graph, &day, goal.goal_type);
                        total += n;
                        elapsed += 1;
                        met += attained(goal.direction, n, goal.target) as u32;
                    }
                    let mean = total.checked_div(elapsed).unwrap_or(0);
                    let mut r = ProgressReport::new(&goal, (start, end), mean);
                    r.attained = elapsed > 0 && met == elapsed;
                    r.days_attained = Some(met);
                    r.days_elapsed = Some(elapsed);
                    r
                }
            };
            reports.push(report);
        }
        let attained_count = reports.iter().filter(|r| r.attained).count();
        Ok(WeeklyReport {
            week_start: monday,
            goal_count: reports.len(),
            attained_count,
            reports,
        })
    }
}
