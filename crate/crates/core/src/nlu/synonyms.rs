//! Surface-form lexicon for typed slot values (meals, days, periods, goal
//! categories, cardinal and ordinal numbers, yes/no).

use std::collections::HashMap;
use std::path::Path;

use chrono::Weekday;

use crate::error::{Error, Result};
use crate::text::tokenize;
use crate::types::{CategoryLabel, MealOccasion, Period};

pub const DEFAULT_SYNONYMS: &str = include_str!("../../data/synonyms.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Canonical {
    Meal(MealOccasion),
    Day(DayRef),
    Period(Period),
    Goal(CategoryLabel),
    Number(u32),
    Ordinal(u32),
    Affirm(bool),
}

/// A relative date mention, resolved against the user's local today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "weekday")]
pub enum DayRef {
    Today,
    Yesterday,
    /// Most recent such weekday, today included.
    Weekday(#[serde(with = "weekday_serde")] Weekday),
}

impl DayRef {
    pub fn resolve(self, today: chrono::NaiveDate) -> chrono::NaiveDate {
        use chrono::Datelike;
        match self {
            DayRef::Today => today,
            DayRef::Yesterday => today.pred_opt().unwrap_or(today),
            DayRef::Weekday(w) => {
                let back = (today.weekday().num_days_from_monday() + 7 - w.num_days_from_monday()) % 7;
                today - chrono::Duration::days(back as i64)
            }
        }
    }
}

mod weekday_serde {
    use chrono::Weekday;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(w: &Weekday, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&w.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Weekday, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|_| serde::de::Error::custom(format!("bad weekday {s}")))
    }
}

fn parse_canonical(s: &str) -> Result<Canonical> {
    let (ns, value) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("synonym canonical `{s}` lacks a namespace")))?;
    let bad = || Error::Config(format!("bad synonym canonical `{s}`"));
    Ok(match ns {
        "meal" => Canonical::Meal(value.parse().map_err(|_| bad())?),
        "day" => Canonical::Day(match value {
            "today" => DayRef::Today,
            "yesterday" => DayRef::Yesterday,
            w => DayRef::Weekday(w.parse().map_err(|_| bad())?),
        }),
        "period" => Canonical::Period(value.parse().map_err(|_| bad())?),
        "goal" => {
            let label: CategoryLabel = value.parse().map_err(|_| bad())?;
            if label == CategoryLabel::Other {
                return Err(bad());
            }
            Canonical::Goal(label)
        }
        "num" => Canonical::Number(value.parse().map_err(|_| bad())?),
        "ord" => Canonical::Ordinal(value.parse().map_err(|_| bad())?),
        "yes" | "no" => Canonical::Affirm(value.parse().map_err(|_| bad())?),
        _ => return Err(bad()),
    })
}

#[derive(Debug, Clone, Default)]
pub struct Synonyms {
    phrases: HashMap<Vec<String>, Canonical>,
    max_len: usize,
}

impl Synonyms {
    pub fn parse(text: &str) -> Result<Synonyms> {
        let mut syn = Synonyms::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, canonical) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("synonyms line {}: expected surface<TAB>canonical", i + 1)))?;
            let toks = tokenize(surface);
            if toks.is_empty() {
                return Err(Error::Config(format!("synonyms line {}: empty surface", i + 1)));
            }
            syn.max_len = syn.max_len.max(toks.len());
            syn.phrases.insert(toks, parse_canonical(canonical.trim())?);
        }
        Ok(syn)
    }

    pub fn load(path: &Path) -> Result<Synonyms> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("read synonyms {}: {e}", path.display())))?;
        Synonyms::parse(&text)
    }

    pub fn shipped() -> Synonyms {
        Synonyms::parse(DEFAULT_SYNONYMS).expect("shipped synonyms parse")
    }

    /// Longest synonym phrase starting at `tokens[start]`, as (length, value).
    /// Single words that answer yes or no; never part of a food name.
    pub fn answer_words(&self) -> std::collections::BTreeSet<String> {
        self.phrases
            .iter()
            .filter(|(k, v)| k.len() == 1 && matches!(v, Canonical::Affirm(_)))
            .map(|(k, _)| k[0].clone())
            .collect()
    }

    pub fn match_at(&self, tokens: &[String], start: usize) -> Option<(usize, Canonical)> {
        let avail = tokens.len().saturating_sub(start);
        (1..=self.max_len.min(avail))
            .rev()
            .find_map(|len| self.phrases.get(&tokens[start..start + len]).map(|&c| (len, c)))
    }

    /// A number at `tokens[start]`: digits or a cardinal word.
    pub fn number_at(&self, tokens: &[String], start: usize) -> Option<u32> {
        let tok = tokens.get(start)?;
        if tok.chars().all(|c| c.is_ascii_digit()) {
            return tok.parse().ok().filter(|&n| n > 0);
        }
        match self.match_at(tokens, start) {
            Some((1, Canonical::Number(n))) => Some(n),
            _ => None,
        }
    }
}
