//! Rule-based per-occasion recommendations from recent and frequent
//! consumption, with a global-popularity fallback.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FoodEntity, KnowledgeGraph};
use crate::journal::FoodLogEntry;
use crate::types::{FoodId, MealOccasion, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommenderConfig {
    pub window_days: i64,
    pub recent_days: i64,
    pub recency_bonus: f64,
    pub k: usize,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        RecommenderConfig {
            window_days: 28,
            recent_days: 7,
            recency_bonus: 0.5,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationRequest {
    pub user_id: UserId,
    pub meal_occasion: MealOccasion,
    pub k: usize,
    pub as_of: DateTime<Utc>,
}

impl RecommendationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::validation("k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Frequent,
    Recent,
    Popular,
    Similar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub food_id: FoodId,
    /// Personalized score; zero for popularity and similarity items.
    pub score: f64,
    pub reason: Reason,
}

/// Orders by popularity (descending), then canonical name, then id.
fn popularity_order(a: &FoodEntity, b: &FoodEntity) -> Ordering {
    b.popularity_count()
        .cmp(&a.popularity_count())
        .then_with(|| a.canonical_name.cmp(&b.canonical_name))
        .then_with(|| a.id.cmp(&b.id))
}

/// Top-`k` foods by popularity across all users.
pub fn global_popularity(graph: &KnowledgeGraph, k: usize) -> Vec<&FoodEntity> {
    let mut foods: Vec<&FoodEntity> = graph.foods().collect();
    foods.sort_by(|a, b| popularity_order(a, b));
    foods.truncate(k);
    foods
}

/// Scores the user's resolved entries for the occasion over the window:
/// one point per entry plus a bonus if any falls within the recent window.
pub fn recommend(
    graph: &KnowledgeGraph,
    entries: &[FoodLogEntry],
    req: &RecommendationRequest,
    cfg: &RecommenderConfig,
) -> Result<Vec<ScoredCandidate>> {
    req.validate()?;
    if graph.food_count() == 0 {
        return Ok(Vec::new());
    }
    let window_start = req.as_of - Duration::days(cfg.window_days);
    let recent_start = req.as_of - Duration::days(cfg.recent_days);
    let mut tally: BTreeMap<FoodId, (u32, bool)> = BTreeMap::new();
    for e in entries {
        let Some(id) = e.food_id else { continue };
        if e.user_id != req.user_id
            || e.meal_occasion != req.meal_occasion
            || e.logged_at < window_start
            || e.logged_at >= req.as_of
            || graph.food(id).is_none()
        {
            continue;
        }
        let t = tally.entry(id).or_default();
        t.0 += 1;
        t.1 |= e.logged_at >= recent_start;
    }

    let mut personal: Vec<(ScoredCandidate, &FoodEntity)> = tally
        .into_iter()
        .map(|(id, (n, recent))| {
            let bonus = if recent { cfg.recency_bonus } else { 0.0 };
            let cand = ScoredCandidate {
                food_id: id,
                score: n as f64 + bonus,
                reason: if recent { Reason::Recent } else { Reason::Frequent },
            };
            (cand, graph.food(id).expect("checked above"))
        })
        .collect();
    personal.sort_by(|(a, fa), (b, fb)| b.score.total_cmp(&a.score).then_with(|| popularity_order(fa, fb)));

    if personal.is_empty() {
        return Ok(global_popularity(graph, req.k)
            .into_iter()
            .map(|f| ScoredCandidate {
                food_id: f.id,
                score: 0.0,
                reason: Reason::Popular,
            })
            .collect());
    }

    let mut out: Vec<ScoredCandidate> = personal.into_iter().take(req.k).map(|(c, _)| c).collect();
    if out.len() == req.k {
        return Ok(out);
    }
    let mut seen: HashSet<FoodId> = out.iter().map(|c| c.food_id).collect();
    // Padding: foods others actually eat, then neighbours of the top pick,
    // then the remainder of the popularity order.
    let ranked = global_popularity(graph, graph.food_count());
    let (eaten, uneaten): (Vec<&FoodEntity>, Vec<&FoodEntity>) =
        ranked.into_iter().partition(|f| f.popularity_count() > 0);
    let similar = graph.similar_foods(out[0].food_id, graph.food_count())?;
    let pads = eaten
        .into_iter()
        .map(|f| (f, Reason::Popular))
        .chain(similar.into_iter().map(|f| (f, Reason::Similar)))
        .chain(uneaten.into_iter().map(|f| (f, Reason::Popular)));
    for (f, reason) in pads {
        if out.len() >= req.k {
            break;
        }
        if seen.insert(f.id) {
            out.push(ScoredCandidate {
                food_id: f.id,
                score: 0.0,
                reason,
            });
        }
    }
    Ok(out)
}
