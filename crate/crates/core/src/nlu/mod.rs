//! Deterministic intent detection and slot extraction.
//!
//! Each intent is scored by its best-matching training example. An example
//! is split into literal tokens and typed placeholders. Typed placeholders
//! (meal, day, period, goal, numbers) claim the first input span of their
//! type; a `{food}` placeholder claims the longest run of remaining tokens
//! that never occur as a literal in any example. The score is the Jaccard
//! index over the example's literals plus placeholders against the
//! unclaimed input tokens plus the filled placeholders:
//!
//! ```text
//! score = (|L ∩ R| + filled) / (|L ∪ R| + placeholders)
//! ```

mod examples;
pub mod synonyms;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Lexicon;
use crate::store::{Family, Store};
use crate::text::tokenize;
use crate::types::{CategoryLabel, MealOccasion, Period};

use examples::{compile, CompiledExample};
pub use examples::{load_examples, parse_examples, shipped_examples, SlotKind, TrainingExample, DEFAULT_EXAMPLES};
pub use synonyms::{Canonical, DayRef, Synonyms, DEFAULT_SYNONYMS};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    LogFood,
    LogWater,
    QueryJournal,
    EditEntry,
    DeleteEntry,
    SetGoal,
    QueryGoal,
    RequestRecommendation,
    SelectOption,
    Greet,
    Help,
    Unknown,
}

impl Intent {
    /// Declaration order doubles as the tie-break order.
    pub const ALL: [Intent; 12] = [
        Intent::LogFood,
        Intent::LogWater,
        Intent::QueryJournal,
        Intent::EditEntry,
        Intent::DeleteEntry,
        Intent::SetGoal,
        Intent::QueryGoal,
        Intent::RequestRecommendation,
        Intent::SelectOption,
        Intent::Greet,
        Intent::Help,
        Intent::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::LogFood => "log_food",
            Intent::LogWater => "log_water",
            Intent::QueryJournal => "query_journal",
            Intent::EditEntry => "edit_entry",
            Intent::DeleteEntry => "delete_entry",
            Intent::SetGoal => "set_goal",
            Intent::QueryGoal => "query_goal",
            Intent::RequestRecommendation => "request_recommendation",
            Intent::SelectOption => "select_option",
            Intent::Greet => "greet",
            Intent::Help => "help",
            Intent::Unknown => "unknown",
        }
    }

    /// Slots this intent may carry.
    pub fn relevant_slots(self) -> &'static [SlotKind] {
        use SlotKind::*;
        match self {
            Intent::LogFood => &[Food, Meal, Quantity, Day],
            Intent::LogWater => &[Quantity, Day],
            Intent::QueryJournal => &[Meal, Day],
            Intent::EditEntry => &[Food, Meal, Quantity, Day],
            Intent::DeleteEntry => &[Food, Meal, Day],
            Intent::SetGoal => &[Goal, Target, Period],
            Intent::QueryGoal => &[Goal],
            Intent::RequestRecommendation => &[Meal],
            Intent::SelectOption => &[Option],
            Intent::Greet | Intent::Help | Intent::Unknown => &[],
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Intent::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown intent `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub food_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meal_occasion: Option<MealOccasion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_type: Option<CategoryLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Period>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_ref: Option<DayRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_index: Option<u32>,
}

impl SlotSet {
    pub fn is_empty(&self) -> bool {
        *self == SlotSet::default()
    }

    pub fn has(&self, kind: SlotKind) -> bool {
        match kind {
            SlotKind::Food => self.food_name.is_some(),
            SlotKind::Meal => self.meal_occasion.is_some(),
            SlotKind::Quantity => self.quantity.is_some(),
            SlotKind::Goal => self.goal_type.is_some(),
            SlotKind::Target => self.target.is_some(),
            SlotKind::Period => self.period.is_some(),
            SlotKind::Day => self.date_ref.is_some(),
            SlotKind::Option => self.option_index.is_some(),
        }
    }

    /// Fills empty slots from `other`.
    pub fn merge_missing(&mut self, other: &SlotSet) {
        macro_rules! fill {
            ($($f:ident),*) => { $( if self.$f.is_none() { self.$f = other.$f.clone(); } )* };
        }
        fill!(
            food_name,
            meal_occasion,
            quantity,
            goal_type,
            target,
            period,
            date_ref,
            option_index
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResult {
    pub intent: Intent,
    pub slots: SlotSet,
    pub confidence: f64,
    /// Yes/no answer present in the text, used by confirmation contexts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affirmation: Option<bool>,
}

impl ParseResult {
    pub fn new(intent: Intent, slots: SlotSet, confidence: f64) -> Self {
        ParseResult {
            intent,
            slots,
            confidence,
            affirmation: None,
        }
    }

    pub fn unknown() -> Self {
        ParseResult::new(Intent::Unknown, SlotSet::default(), 0.0)
    }

    /// A direct option pick, e.g. a tapped card.
    pub fn select(option_index: u32) -> Self {
        ParseResult::new(
            Intent::SelectOption,
            SlotSet {
                option_index: Some(option_index),
                ..SlotSet::default()
            },
            1.0,
        )
    }
}

struct ExampleSet {
    raw: Vec<TrainingExample>,
    compiled: Vec<CompiledExample>,
    /// Every literal token across all examples plus yes/no words; `{food}`
    /// never absorbs these.
    vocabulary: BTreeSet<String>,
}

impl ExampleSet {
    fn build(raw: Vec<TrainingExample>, synonyms: &Synonyms) -> Result<ExampleSet> {
        let compiled: Vec<CompiledExample> = raw.iter().map(compile).collect::<Result<_>>()?;
        let vocabulary = compiled
            .iter()
            .flat_map(|c| c.literals.iter().cloned())
            .chain(synonyms.answer_words())
            .collect();
        Ok(ExampleSet {
            raw,
            compiled,
            vocabulary,
        })
    }
}

pub struct Nlu {
    examples: RwLock<ExampleSet>,
    synonyms: Synonyms,
    lexicon: Lexicon,
    threshold: f64,
}

impl Nlu {
    pub fn new(examples: Vec<TrainingExample>, synonyms: Synonyms, lexicon: Lexicon) -> Result<Nlu> {
        Ok(Nlu {
            examples: RwLock::new(ExampleSet::build(examples, &synonyms)?),
            synonyms,
            lexicon,
            threshold: DEFAULT_THRESHOLD,
        })
    }

    /// Shipped examples, synonyms and lexicon.
    pub fn shipped() -> Nlu {
        Nlu::new(shipped_examples(), Synonyms::shipped(), Lexicon::shipped()).expect("shipped nlu data is valid")
    }

    pub fn with_threshold(mut self, threshold: f64) -> Nlu {
        self.threshold = threshold;
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn synonyms(&self) -> &Synonyms {
        &self.synonyms
    }

    pub fn examples(&self) -> Vec<TrainingExample> {
        self.examples.read().raw.clone()
    }

    pub fn example_count(&self, intent: Intent) -> usize {
        self.examples.read().raw.iter().filter(|e| e.intent == intent).count()
    }

    /// Best-scoring intent, or `unknown` below the threshold.
    pub fn detect_intent(&self, text: &str) -> ParseResult {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return ParseResult::unknown();
        }
        let set = self.examples.read();
        let mut best = [0.0f64; Intent::ALL.len()];
        for ex in &set.compiled {
            let s = self.score_example(&tokens, ex, &set.vocabulary);
            let slot = &mut best[ex.intent as usize];
            if s > *slot {
                *slot = s;
            }
        }
        let (intent, score) =
            Intent::ALL.iter().zip(best).fold(
                (Intent::Unknown, 0.0),
                |acc, (&i, s)| if s > acc.1 { (i, s) } else { acc },
            );
        let affirmation = self.affirmation(&tokens);
        if score < self.threshold {
            return ParseResult {
                intent: Intent::Unknown,
                slots: SlotSet::default(),
                confidence: score,
                affirmation,
            };
        }
        ParseResult {
            intent,
            slots: extract(&tokens, intent, &self.synonyms, &self.lexicon, &set.vocabulary),
            confidence: score,
            affirmation,
        }
    }

    /// Slots relevant to `intent` found in `text`.
    pub fn extract_slots(&self, text: &str, intent: Intent) -> SlotSet {
        let tokens = tokenize(text);
        let set = self.examples.read();
        extract(&tokens, intent, &self.synonyms, &self.lexicon, &set.vocabulary)
    }

    /// Like [`Nlu::detect_intent`], but when the conversation awaits a slot
    /// of `expect`, a bare answer carrying that slot is read as a reply to
    /// the pending intent unless another intent matched exactly.
    pub fn parse_in_context(&self, text: &str, expect: Option<(Intent, SlotKind)>) -> ParseResult {
        let parsed = self.detect_intent(text);
        let Some((intent, kind)) = expect else { return parsed };
        let weak = matches!(parsed.intent, Intent::Unknown | Intent::SelectOption) || parsed.confidence < 1.0;
        if !weak || parsed.intent == intent {
            return parsed;
        }
        let slots = self.extract_slots(text, intent);
        if !slots.has(kind) {
            return parsed;
        }
        ParseResult {
            intent,
            slots,
            confidence: parsed.confidence,
            affirmation: parsed.affirmation,
        }
    }

    /// Validates and appends examples, persisting them when a store is given.
    /// Returns the number added.
    pub fn add_examples(&self, new: &[TrainingExample], store: Option<&Store>) -> Result<usize> {
        if new.is_empty() {
            return Ok(0);
        }
        for ex in new {
            compile(ex)?;
        }
        if let Some(store) = store {
            store.transact(Family::Examples, |txn| {
                for ex in new {
                    let seq = txn.next_seq()?;
                    txn.put(&format!("ex/{seq:08}"), ex)?;
                }
                Ok(())
            })?;
        }
        let mut set = self.examples.write();
        let mut raw = std::mem::take(&mut set.raw);
        raw.extend(new.iter().cloned());
        *set = ExampleSet::build(raw, &self.synonyms)?;
        Ok(new.len())
    }

    /// Appends examples previously persisted with [`Nlu::add_examples`].
    pub fn load_persisted(&self, store: &Store) -> Result<usize> {
        let stored: Vec<TrainingExample> = store
            .scan::<TrainingExample>(Family::Examples, "ex/")?
            .into_iter()
            .map(|(_, e)| e)
            .collect();
        self.add_examples(&stored, None)
    }

    fn affirmation(&self, tokens: &[String]) -> Option<bool> {
        (0..tokens.len()).find_map(|i| match self.synonyms.match_at(tokens, i) {
            Some((_, Canonical::Affirm(b))) => Some(b),
            _ => None,
        })
    }

    fn score_example(&self, tokens: &[String], ex: &CompiledExample, vocabulary: &BTreeSet<String>) -> f64 {
        let mut claimed = vec![false; tokens.len()];
        let mut filled = 0usize;
        for kind in ex.slots.iter().filter(|k| **k != SlotKind::Food) {
            if let Some((start, len)) = self.find_typed(tokens, &claimed, *kind, &ex.literals) {
                claimed[start..start + len].iter_mut().for_each(|c| *c = true);
                filled += 1;
            }
        }
        for _ in ex.slots.iter().filter(|k| **k == SlotKind::Food) {
            if let Some((start, len)) = longest_free_run(tokens, &claimed, vocabulary) {
                claimed[start..start + len].iter_mut().for_each(|c| *c = true);
                filled += 1;
            }
        }
        let rest: BTreeSet<&str> = tokens
            .iter()
            .zip(&claimed)
            .filter(|(_, c)| !**c)
            .map(|(t, _)| t.as_str())
            .collect();
        let inter = ex.literals.iter().filter(|l| rest.contains(l.as_str())).count();
        let union = ex.literals.len() + rest.len() - inter;
        let denom = union + ex.slots.len();
        if denom == 0 {
            return 0.0;
        }
        (inter + filled) as f64 / denom as f64
    }

    fn find_typed(
        &self,
        tokens: &[String],
        claimed: &[bool],
        kind: SlotKind,
        literals: &BTreeSet<String>,
    ) -> Option<(usize, usize)> {
        (0..tokens.len()).find_map(|i| {
            if claimed[i] || literals.contains(&tokens[i]) {
                return None;
            }
            let len = typed_len(tokens, i, kind, &self.synonyms, &self.lexicon)?;
            (!claimed[i..i + len].iter().any(|c| *c)).then_some((i, len))
        })
    }
}

/// Length of a `kind` value starting at `tokens[i]`, if one starts there.
fn typed_len(tokens: &[String], i: usize, kind: SlotKind, syn: &Synonyms, lexicon: &Lexicon) -> Option<usize> {
    let canon = syn.match_at(tokens, i);
    match kind {
        SlotKind::Meal => matches!(canon, Some((_, Canonical::Meal(_)))).then(|| canon.unwrap().0),
        SlotKind::Day => matches!(canon, Some((_, Canonical::Day(_)))).then(|| canon.unwrap().0),
        SlotKind::Period => matches!(canon, Some((_, Canonical::Period(_)))).then(|| canon.unwrap().0),
        SlotKind::Goal => match canon {
            Some((len, Canonical::Goal(_))) => Some(len),
            _ => lexicon
                .find_in(&tokens[i..])
                .filter(|(s, _, label)| *s == 0 && *label != CategoryLabel::Other)
                .map(|(_, e, _)| e),
        },
        SlotKind::Quantity | SlotKind::Target => syn.number_at(tokens, i).map(|_| 1),
        SlotKind::Option => match canon {
            Some((len, Canonical::Ordinal(_))) => Some(len),
            _ => syn.number_at(tokens, i).map(|_| 1),
        },
        SlotKind::Food => None,
    }
}

fn longest_free_run(tokens: &[String], claimed: &[bool], vocabulary: &BTreeSet<String>) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < tokens.len() {
        if claimed[i] || vocabulary.contains(&tokens[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < tokens.len() && !claimed[i] && !vocabulary.contains(&tokens[i]) {
            i += 1;
        }
        if best.is_none_or(|(_, len)| i - start > len) {
            best = Some((start, i - start));
        }
    }
    best
}

fn extract(
    tokens: &[String],
    intent: Intent,
    syn: &Synonyms,
    lexicon: &Lexicon,
    vocabulary: &BTreeSet<String>,
) -> SlotSet {
    let wanted = intent.relevant_slots();
    let mut slots = SlotSet::default();
    let mut claimed = vec![false; tokens.len()];
    let claim = |claimed: &mut Vec<bool>, start: usize, len: usize| {
        claimed[start..start + len].iter_mut().for_each(|c| *c = true);
    };

    let mut spans: Vec<(usize, usize, Canonical)> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match syn.match_at(tokens, i) {
            Some((len, c)) => {
                spans.push((i, len, c));
                i += len;
            }
            None => i += 1,
        }
    }

    if wanted.contains(&SlotKind::Meal) {
        let mut meals = spans.iter().filter(|(_, _, c)| matches!(c, Canonical::Meal(_)));
        // An edit names the destination meal last ("move laksa to dinner").
        let pick = if intent == Intent::EditEntry {
            meals.next_back()
        } else {
            meals.next()
        };
        if let Some(&(s, l, Canonical::Meal(m))) = pick {
            slots.meal_occasion = Some(m);
            claim(&mut claimed, s, l);
        }
    }
    if wanted.contains(&SlotKind::Day) {
        if let Some(&(s, l, Canonical::Day(d))) = spans.iter().find(|(_, _, c)| matches!(c, Canonical::Day(_))) {
            slots.date_ref = Some(d);
            claim(&mut claimed, s, l);
        }
    }
    if wanted.contains(&SlotKind::Period) {
        if let Some(&(s, l, Canonical::Period(p))) = spans.iter().find(|(_, _, c)| matches!(c, Canonical::Period(_))) {
            slots.period = Some(p);
            claim(&mut claimed, s, l);
        }
    }
    if wanted.contains(&SlotKind::Goal) {
        let from_syn = spans
            .iter()
            .find(|(_, _, c)| matches!(c, Canonical::Goal(_)))
            .map(|&(s, l, c)| match c {
                Canonical::Goal(g) => (s, l, g),
                _ => unreachable!(),
            });
        let from_lex = lexicon
            .find_in(tokens)
            .filter(|(_, _, label)| *label != CategoryLabel::Other)
            .map(|(s, e, label)| (s, e - s, label));
        let pick = match (from_syn, from_lex) {
            (Some(a), Some(b)) => Some(if b.0 < a.0 { b } else { a }),
            (a, b) => a.or(b),
        };
        if let Some((s, l, g)) = pick {
            slots.goal_type = Some(g);
            claim(&mut claimed, s, l);
        }
    }
    let wants_number = [SlotKind::Quantity, SlotKind::Target, SlotKind::Option]
        .iter()
        .find(|k| wanted.contains(k))
        .copied();
    if let Some(kind) = wants_number {
        let found = (0..tokens.len()).find_map(|i| {
            if claimed[i] {
                return None;
            }
            if let Some(n) = syn.number_at(tokens, i) {
                return Some((i, n));
            }
            match (kind, syn.match_at(tokens, i)) {
                (SlotKind::Option, Some((1, Canonical::Ordinal(n)))) => Some((i, n)),
                _ => None,
            }
        });
        if let Some((i, n)) = found {
            match kind {
                SlotKind::Quantity => slots.quantity = Some(n),
                SlotKind::Target => slots.target = Some(n),
                _ => slots.option_index = Some(n),
            }
            claim(&mut claimed, i, 1);
        }
    }
    if wanted.contains(&SlotKind::Food) {
        // Meal, day and affirmation words are never part of a food name.
        for &(s, l, c) in &spans {
            if matches!(c, Canonical::Meal(_) | Canonical::Day(_) | Canonical::Affirm(_)) {
                claim(&mut claimed, s, l);
            }
        }
        if let Some((s, l)) = longest_free_run(tokens, &claimed, vocabulary) {
            slots.food_name = Some(tokens[s..s + l].join(" "));
        }
    }
    slots
}

#[cfg(test)]
mod tests;
