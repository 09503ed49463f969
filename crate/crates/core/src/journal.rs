//! Food and water log entries.
//!
//! Key schema in the entries family:
//! - `e/<user>/<local-day>/<logged_at>/<entry_id>` — the entry itself
//! - `i/<entry_id>` — entry key, for lookup by id
//! - `t/<user>/<turn_id>` — first entry written by a turn (idempotency)

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::store::{Family, Store, Txn};
use crate::types::{FoodId, MealOccasion, UserId};
use crate::users::UserProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodLogEntry {
    pub entry_id: String,
    pub user_id: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub food_id: Option<FoodId>,
    pub raw_name: String,
    pub meal_occasion: MealOccasion,
    pub servings: u32,
    pub logged_at: DateTime<Utc>,
    pub turn_id: String,
    /// True iff `food_id` is absent.
    pub unresolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterLogEntry {
    pub entry_id: String,
    pub user_id: UserId,
    pub glasses: u32,
    pub logged_at: DateTime<Utc>,
    pub turn_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEntry {
    Food(FoodLogEntry),
    Water(WaterLogEntry),
}

impl JournalEntry {
    pub fn entry_id(&self) -> &str {
        match self {
            JournalEntry::Food(e) => &e.entry_id,
            JournalEntry::Water(e) => &e.entry_id,
        }
    }

    pub fn user_id(&self) -> &UserId {
        match self {
            JournalEntry::Food(e) => &e.user_id,
            JournalEntry::Water(e) => &e.user_id,
        }
    }

    pub fn logged_at(&self) -> DateTime<Utc> {
        match self {
            JournalEntry::Food(e) => e.logged_at,
            JournalEntry::Water(e) => e.logged_at,
        }
    }

    pub fn as_food(&self) -> Option<&FoodLogEntry> {
        match self {
            JournalEntry::Food(e) => Some(e),
            JournalEntry::Water(_) => None,
        }
    }

    pub fn as_water(&self) -> Option<&WaterLogEntry> {
        match self {
            JournalEntry::Water(e) => Some(e),
            JournalEntry::Food(_) => None,
        }
    }

    fn resolved_food(&self) -> Option<FoodId> {
        self.as_food().and_then(|f| f.food_id)
    }
}

/// Fields to change on an existing entry; `None` leaves a field as is.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntryPatch {
    /// New food reference and display name. A `null` id marks it unresolved.
    #[serde(default)]
    pub food: Option<FoodRef>,
    #[serde(default)]
    pub meal_occasion: Option<MealOccasion>,
    #[serde(default)]
    pub servings: Option<u32>,
    #[serde(default)]
    pub glasses: Option<u32>,
    #[serde(default)]
    pub logged_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodRef {
    pub food_id: Option<FoodId>,
    pub raw_name: String,
}

fn time_key(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%M%S%.6fZ").to_string()
}

fn entry_key(user: &UserProfile, at: DateTime<Utc>, entry_id: &str) -> String {
    format!(
        "e/{}/{}/{}/{}",
        user.user_id,
        user.local_day(at),
        time_key(at),
        entry_id
    )
}

fn turn_key(user: &UserId, turn_id: &str) -> String {
    format!("t/{user}/{turn_id}")
}

fn id_key(entry_id: &str) -> String {
    format!("i/{entry_id}")
}

pub struct Journal {
    store: Arc<Store>,
    graph: Arc<KnowledgeGraph>,
    clock: Arc<dyn Clock>,
}

impl Journal {
    pub fn new(store: Arc<Store>, graph: Arc<KnowledgeGraph>, clock: Arc<dyn Clock>) -> Self {
        Journal { store, graph, clock }
    }

    pub fn graph(&self) -> &Arc<KnowledgeGraph> {
        &self.graph
    }

    #[allow(clippy::too_many_arguments)]
    pub fn log_food(
        &self,
        user: &UserProfile,
        food_id: Option<FoodId>,
        raw_name: &str,
        occasion: MealOccasion,
        servings: u32,
        at: DateTime<Utc>,
        turn_id: &str,
    ) -> Result<FoodLogEntry> {
        if servings < 1 {
            return Err(Error::validation("servings must be at least 1"));
        }
        self.check_food(food_id)?;
        let raw_name = raw_name.trim();
        if raw_name.is_empty() {
            return Err(Error::validation("food name is empty"));
        }
        self.check_time(at)?;
        check_turn(turn_id)?;
        let (entry, fresh) = self.write_new(user, turn_id, |entry_id| {
            JournalEntry::Food(FoodLogEntry {
                entry_id,
                user_id: user.user_id.clone(),
                food_id,
                raw_name: raw_name.to_owned(),
                meal_occasion: occasion,
                servings,
                logged_at: at,
                turn_id: turn_id.to_owned(),
                unresolved: food_id.is_none(),
            })
        })?;
        let JournalEntry::Food(entry) = entry else {
            return Err(Error::validation(format!("turn `{turn_id}` already logged water")));
        };
        if fresh {
            if let Some(id) = entry.food_id {
                self.graph.adjust_popularity(id, 1);
            }
        }
        Ok(entry)
    }

    pub fn log_water(
        &self,
        user: &UserProfile,
        glasses: u32,
        at: DateTime<Utc>,
        turn_id: &str,
    ) -> Result<WaterLogEntry> {
        if glasses < 1 {
            return Err(Error::validation("glasses must be at least 1"));
        }
        self.check_time(at)?;
        check_turn(turn_id)?;
        let (entry, _) = self.write_new(user, turn_id, |entry_id| {
            JournalEntry::Water(WaterLogEntry {
                entry_id,
                user_id: user.user_id.clone(),
                glasses,
                logged_at: at,
                turn_id: turn_id.to_owned(),
            })
        })?;
        match entry {
            JournalEntry::Water(e) => Ok(e),
            JournalEntry::Food(_) => Err(Error::validation(format!("turn `{turn_id}` already logged food"))),
        }
    }

    /// Writes a new entry unless the turn already produced one, in which case
    /// that entry (its current version, or the original if since deleted) is
    /// returned. The flag reports whether a write happened.
    fn write_new(
        &self,
        user: &UserProfile,
        turn_id: &str,
        make: impl FnOnce(String) -> JournalEntry,
    ) -> Result<(JournalEntry, bool)> {
        self.store.transact(Family::Entries, |txn| {
            let tkey = turn_key(&user.user_id, turn_id);
            if let Some(original) = txn.get::<JournalEntry>(&tkey)? {
                let current = match txn.get::<String>(&id_key(original.entry_id()))? {
                    Some(k) => txn.get::<JournalEntry>(&k)?,
                    None => None,
                };
                return Ok((current.unwrap_or(original), false));
            }
            let entry_id = format!("e{:08}", txn.next_seq()?);
            let entry = make(entry_id.clone());
            let key = entry_key(user, entry.logged_at(), &entry_id);
            txn.put(&key, &entry)?;
            txn.put(&id_key(&entry_id), &key)?;
            txn.put(&tkey, &entry)?;
            Ok((entry, true))
        })
    }

    /// Entry previously written for `turn_id`, if any.
    pub fn entry_for_turn(&self, user: &UserId, turn_id: &str) -> Result<Option<JournalEntry>> {
        self.store.get(Family::Entries, &turn_key(user, turn_id))
    }

    pub fn get_entry(&self, user: &UserId, entry_id: &str) -> Result<JournalEntry> {
        let key: String = self
            .store
            .get(Family::Entries, &id_key(entry_id))?
            .ok_or_else(|| Error::not_found(format!("entry `{entry_id}`")))?;
        let entry: JournalEntry = self
            .store
            .get(Family::Entries, &key)?
            .ok_or_else(|| Error::not_found(format!("entry `{entry_id}`")))?;
        if entry.user_id() != user {
            return Err(Error::Unauthorized(format!(
                "entry `{entry_id}` belongs to another user"
            )));
        }
        Ok(entry)
    }

    /// Entries with `logged_at` in `[start, end)`, ascending. An occasion
    /// filter drops water entries.
    pub fn list_entries(
        &self,
        user: &UserProfile,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
        occasion: Option<MealOccasion>,
    ) -> Result<Vec<JournalEntry>> {
        if start > end {
            return Err(Error::validation("range start is after range end"));
        }
        let mut out = Vec::new();
        if start == end {
            return Ok(out);
        }
        let mut day = user.local_day(start);
        let last = user.local_day(end);
        while day <= last {
            let prefix = format!("e/{}/{}/", user.user_id, day);
            for (_, e) in self.store.scan::<JournalEntry>(Family::Entries, &prefix)? {
                let t = e.logged_at();
                if t < start || t >= end {
                    continue;
                }
                match (&e, occasion) {
                    (_, None) => out.push(e),
                    (JournalEntry::Food(f), Some(o)) if f.meal_occasion == o => out.push(e),
                    _ => {}
                }
            }
            day = day.succ_opt().expect("date in range");
        }
        Ok(out)
    }

    /// All entries on one local day, ascending.
    pub fn entries_on(&self, user: &UserProfile, day: NaiveDate) -> Result<Vec<JournalEntry>> {
        let (s, e) = user.day_window(day);
        self.list_entries(user, s, e, None)
    }

    pub fn food_entries(
        &self,
        user: &UserProfile,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    ) -> Result<Vec<FoodLogEntry>> {
        Ok(self
            .list_entries(user, start, end, None)?
            .into_iter()
            .filter_map(|e| match e {
                JournalEntry::Food(f) => Some(f),
                JournalEntry::Water(_) => None,
            })
            .collect())
    }

    pub fn water_total(&self, user: &UserProfile, day: NaiveDate) -> Result<u32> {
        Ok(self
            .entries_on(user, day)?
            .iter()
            .filter_map(JournalEntry::as_water)
            .map(|w| w.glasses)
            .sum())
    }

    pub fn edit_entry(&self, user: &UserProfile, entry_id: &str, patch: &EntryPatch) -> Result<JournalEntry> {
        if let Some(f) = &patch.food {
            self.check_food(f.food_id)?;
            if f.raw_name.trim().is_empty() {
                return Err(Error::validation("food name is empty"));
            }
        }
        if patch.servings == Some(0) || patch.glasses == Some(0) {
            return Err(Error::validation("amounts must be at least 1"));
        }
        if let Some(t) = patch.logged_at {
            self.check_time(t)?;
        }
        let (old, new) = self.store.transact(Family::Entries, |txn| {
            let (key, old) = owned_entry(txn, &user.user_id, entry_id)?;
            let mut new = old.clone();
            match &mut new {
                JournalEntry::Food(f) => {
                    if patch.glasses.is_some() {
                        return Err(Error::validation("glasses apply to water entries only"));
                    }
                    if let Some(r) = &patch.food {
                        f.food_id = r.food_id;
                        f.raw_name = r.raw_name.trim().to_owned();
                        f.unresolved = r.food_id.is_none();
                    }
                    if let Some(o) = patch.meal_occasion {
                        f.meal_occasion = o;
                    }
                    if let Some(s) = patch.servings {
                        f.servings = s;
                    }
                    if let Some(t) = patch.logged_at {
                        f.logged_at = t;
                    }
                }
                JournalEntry::Water(w) => {
                    if patch.food.is_some() || patch.meal_occasion.is_some() || patch.servings.is_some() {
                        return Err(Error::validation("water entries only carry glasses and time"));
                    }
                    if let Some(g) = patch.glasses {
                        w.glasses = g;
                    }
                    if let Some(t) = patch.logged_at {
                        w.logged_at = t;
                    }
                }
            }
            let new_key = entry_key(user, new.logged_at(), entry_id);
            if new_key != key {
                txn.delete(&key);
                txn.put(&id_key(entry_id), &new_key)?;
            }
            txn.put(&new_key, &new)?;
            Ok((old, new))
        })?;
        if old.resolved_food() != new.resolved_food() {
            if let Some(id) = old.resolved_food() {
                self.graph.adjust_popularity(id, -1);
            }
            if let Some(id) = new.resolved_food() {
                self.graph.adjust_popularity(id, 1);
            }
        }
        Ok(new)
    }

    /// Hard-deletes an entry and returns it.
    pub fn delete_entry(&self, user: &UserProfile, entry_id: &str) -> Result<JournalEntry> {
        let old = self.store.transact(Family::Entries, |txn| {
            let (key, old) = owned_entry(txn, &user.user_id, entry_id)?;
            txn.delete(&key);
            txn.delete(&id_key(entry_id));
            Ok(old)
        })?;
        if let Some(id) = old.resolved_food() {
            self.graph.adjust_popularity(id, -1);
        }
        Ok(old)
    }

    /// Every stored entry across users.
    pub fn all_entries(&self) -> Result<Vec<JournalEntry>> {
        Ok(self
            .store
            .scan::<JournalEntry>(Family::Entries, "e/")?
            .into_iter()
            .map(|(_, e)| e)
            .collect())
    }

    /// Rebuilds popularity counts from the journal; returns entries counted.
    pub fn recount_popularity(&self) -> Result<u64> {
        let mut counts: BTreeMap<FoodId, u64> = BTreeMap::new();
        for e in self.all_entries()? {
            if let Some(id) = e.resolved_food() {
                *counts.entry(id).or_default() += 1;
            }
        }
        self.graph.reset_popularity();
        for (&id, &n) in &counts {
            self.graph.set_popularity(id, n);
        }
        Ok(counts.values().sum())
    }

    fn check_food(&self, food_id: Option<FoodId>) -> Result<()> {
        match food_id {
            Some(id) if self.graph.food(id).is_none() => Err(Error::validation(format!("unknown food `{id}`"))),
            _ => Ok(()),
        }
    }

    fn check_time(&self, at: DateTime<Utc>) -> Result<()> {
        // A little slack absorbs client clock skew.
        if at > self.clock.now() + Duration::seconds(5) {
            return Err(Error::validation("entry time is in the future"));
        }
        Ok(())
    }
}

fn check_turn(turn_id: &str) -> Result<()> {
    if turn_id.is_empty() || turn_id.len() > 128 || turn_id.contains('/') {
        return Err(Error::validation("turn id must be 1-128 characters without `/`"));
    }
    Ok(())
}

fn owned_entry(txn: &Txn<'_>, user: &UserId, entry_id: &str) -> Result<(String, JournalEntry)> {
    let key: String = txn
        .get(&id_key(entry_id))?
        .ok_or_else(|| Error::not_found(format!("entry `{entry_id}`")))?;
    let entry: JournalEntry = txn
        .get(&key)?
        .ok_or_else(|| Error::not_found(format!("entry `{entry_id}`")))?;
    if entry.user_id() != user {
        return Err(Error::Unauthorized(format!(
            "entry `{entry_id}` belongs to another user"
        )));
    }
    Ok((key, entry))
}
