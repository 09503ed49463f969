//! Training utterances with typed slot placeholders.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Intent;
use crate::error::{Error, Result};
use crate::text::tokenize;

pub const DEFAULT_EXAMPLES: &str = include_str!("../../data/intents.tsv");

/// Placeholder kinds usable inside example utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotKind {
    Food,
    Meal,
    Quantity,
    Goal,
    Target,
    Period,
    Day,
    Option,
}

impl SlotKind {
    pub const ALL: [SlotKind; 8] = [
        SlotKind::Food,
        SlotKind::Meal,
        SlotKind::Quantity,
        SlotKind::Goal,
        SlotKind::Target,
        SlotKind::Period,
        SlotKind::Day,
        SlotKind::Option,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SlotKind::Food => "food",
            SlotKind::Meal => "meal",
            SlotKind::Quantity => "quantity",
            SlotKind::Goal => "goal",
            SlotKind::Target => "target",
            SlotKind::Period => "period",
            SlotKind::Day => "day",
            SlotKind::Option => "option",
        }
    }

    fn from_name(s: &str) -> Option<SlotKind> {
        SlotKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub intent: Intent,
    pub utterance: String,
}

impl TrainingExample {
    pub fn new(intent: Intent, utterance: impl Into<String>) -> Self {
        TrainingExample {
            intent,
            utterance: utterance.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Lit(String),
    Slot(SlotKind),
}

/// A validated example, pre-split into literal tokens and placeholders.
#[derive(Debug, Clone)]
pub(crate) struct CompiledExample {
    pub intent: Intent,
    pub literals: BTreeSet<String>,
    pub slots: Vec<SlotKind>,
}

pub(crate) fn compile(ex: &TrainingExample) -> Result<CompiledExample> {
    if ex.intent == Intent::Unknown {
        return Err(Error::validation("examples cannot be labeled `unknown`"));
    }
    let mut pieces = Vec::new();
    for word in ex.utterance.split_whitespace() {
        if let Some(inner) = word.strip_prefix('{') {
            let name = inner
                .strip_suffix('}')
                .ok_or_else(|| Error::validation(format!("unterminated placeholder in `{}`", ex.utterance)))?;
            let kind = SlotKind::from_name(name)
                .ok_or_else(|| Error::validation(format!("unknown placeholder {{{name}}}")))?;
            pieces.push(Piece::Slot(kind));
        } else {
            pieces.extend(tokenize(word).into_iter().map(Piece::Lit));
        }
    }
    if pieces.is_empty() {
        return Err(Error::validation("example utterance is empty"));
    }
    let literals = pieces
        .iter()
        .filter_map(|p| match p {
            Piece::Lit(t) => Some(t.clone()),
            Piece::Slot(_) => None,
        })
        .collect();
    let slots = pieces
        .iter()
        .filter_map(|p| match p {
            Piece::Slot(k) => Some(*k),
            Piece::Lit(_) => None,
        })
        .collect();
    Ok(CompiledExample {
        intent: ex.intent,
        literals,
        slots,
    })
}

/// Parses `intent<TAB>utterance` lines.
pub fn parse_examples(text: &str) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (intent, utterance) = line
            .split_once('\t')
            .ok_or_else(|| Error::validation(format!("examples line {}: expected intent<TAB>utterance", i + 1)))?;
        let intent: Intent = intent
            .trim()
            .parse()
            .map_err(|e| Error::validation(format!("examples line {}: {e}", i + 1)))?;
        let ex = TrainingExample::new(intent, utterance.trim());
        compile(&ex).map_err(|e| Error::validation(format!("examples line {}: {e}", i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn load_examples(path: &Path) -> Result<Vec<TrainingExample>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("read examples {}: {e}", path.display())))?;
    parse_examples(&text)
}

pub fn shipped_examples() -> Vec<TrainingExample> {
    parse_examples(DEFAULT_EXAMPLES).expect("shipped examples parse")
}
