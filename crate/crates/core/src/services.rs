//! The live service bundle: dialog lookups plus command execution.

use std::sync::Arc;

use chrono::{DateTime, Utc};

use crate::dialog::{Command, DialogServices};
use crate::error::{Error, Result};
use crate::goals::{Goal, GoalTemplate, Goals, ProgressReport};
use crate::graph::KnowledgeGraph;
use crate::journal::{Journal, JournalEntry};
use crate::recommender::{recommend, RecommendationRequest, RecommenderConfig, ScoredCandidate};
use crate::types::{CategoryLabel, MealOccasion, UserId};
use crate::users::UserProfile;

#[derive(Clone)]
pub struct Services {
    pub graph: Arc<KnowledgeGraph>,
    pub journal: Arc<Journal>,
    pub goals: Arc<Goals>,
    pub recommender: RecommenderConfig,
}

impl Services {
    pub fn recommend_for(
        &self,
        user: &UserProfile,
        occasion: MealOccasion,
        k: usize,
        now: DateTime<Utc>,
    ) -> Result<Vec<ScoredCandidate>> {
        let start = now - chrono::Duration::days(self.recommender.window_days);
        let entries = self.journal.food_entries(user, start, now)?;
        let req = RecommendationRequest {
            user_id: user.user_id.clone(),
            meal_occasion: occasion,
            k,
            as_of: now,
        };
        recommend(&self.graph, &entries, &req, &self.recommender)
    }

    /// Runs one dialog command. Every command is safe to re-run for the
    /// same turn: logs are keyed by turn id, edits are absolute, a repeated
    /// delete finds nothing, and an unchanged goal is not re-recorded.
    pub fn apply(&self, user: &UserProfile, cmd: &Command, now: DateTime<Utc>) -> Result<()> {
        match cmd {
            Command::LogFood {
                turn_id,
                food_id,
                raw_name,
                meal_occasion,
                servings,
                logged_at,
            } => {
                self.journal
                    .log_food(user, *food_id, raw_name, *meal_occasion, *servings, *logged_at, turn_id)?;
            }
            Command::LogWater {
                turn_id,
                glasses,
                logged_at,
            } => {
                self.journal.log_water(user, *glasses, *logged_at, turn_id)?;
            }
            Command::EditEntry { entry_id, patch, .. } => {
                self.journal.edit_entry(user, entry_id, patch)?;
            }
            Command::DeleteEntry { entry_id, .. } => match self.journal.delete_entry(user, entry_id) {
                Ok(_) | Err(Error::NotFound(_)) => {}
                Err(e) => return Err(e),
            },
            Command::SetGoal { template, .. } => {
                let current = self.goals.active_goal(&user.user_id, template.goal_type)?;
                if current.map(|g| g.template()) != Some(*template) {
                    self.goals.set_goal(&user.user_id, *template, now)?;
                }
            }
        }
        Ok(())
    }
}

impl DialogServices for Services {
    fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    fn entries(&self, user: &UserProfile, start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Vec<JournalEntry>> {
        self.journal.list_entries(user, start, end.max(start), None)
    }

    fn entry(&self, user: &UserProfile, entry_id: &str) -> Result<Option<JournalEntry>> {
        match self.journal.get_entry(&user.user_id, entry_id) {
            Ok(e) => Ok(Some(e)),
            Err(Error::NotFound(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn progress(&self, user: &UserProfile, now: DateTime<Utc>) -> Result<Vec<ProgressReport>> {
        self.goals.progress_all(user, now)
    }

    fn active_goal(&self, user: &UserId, label: CategoryLabel) -> Result<Option<Goal>> {
        self.goals.active_goal(user, label)
    }

    fn default_goal(&self, label: CategoryLabel) -> Option<GoalTemplate> {
        self.goals.defaults().iter().find(|g| g.goal_type == label).copied()
    }

    fn recommend(
        &self,
        user: &UserProfile,
        occasion: MealOccasion,
        now: DateTime<Utc>,
    ) -> Result<Vec<ScoredCandidate>> {
        self.recommend_for(user, occasion, self.recommender.k, now)
    }
}
