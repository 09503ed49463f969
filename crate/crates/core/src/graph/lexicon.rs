//! Keyword to category lexicon used to label foods at ingest.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize_name, tokenize};
use crate::types::CategoryLabel;

/// Shipped default lexicon.
pub const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.tsv");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub keyword: Vec<String>,
    pub label: CategoryLabel,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
}

impl Lexicon {
    /// Parses `keyword<TAB>label` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Lexicon> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (kw, label) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("lexicon line {}: expected keyword<TAB>label", i + 1)))?;
            let label: CategoryLabel = label
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("lexicon line {}: {e}", i + 1)))?;
            let keyword = tokenize(kw);
            if keyword.is_empty() {
                return Err(Error::Config(format!("lexicon line {}: empty keyword", i + 1)));
            }
            entries.push(LexiconEntry { keyword, label });
        }
        Ok(Lexicon { entries })
    }

    pub fn load(path: &Path) -> Result<Lexicon> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("read lexicon {}: {e}", path.display())))?;
        Lexicon::parse(&text)
    }

    pub fn shipped() -> Lexicon {
        Lexicon::parse(DEFAULT_LEXICON).expect("shipped lexicon parses")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    /// Labels whose keyword occurs in `name` as a whole-token phrase. The last
    /// token of a keyword also matches its plural (`s`, `es`, `y`→`ies`).
    pub fn labels_for(&self, name: &str) -> BTreeSet<CategoryLabel> {
        let normalized = normalize_name(name);
        let tokens: Vec<&str> = normalized.split(' ').filter(|t| !t.is_empty()).collect();
        self.entries
            .iter()
            .filter(|e| phrase_occurs(&tokens, &e.keyword))
            .map(|e| e.label)
            .collect()
    }

    /// First matching keyword phrase and its label, scanning `tokens` left to
    /// right and preferring longer phrases at each position. Returns the
    /// token span `[start, end)`.
    pub fn find_in(&self, tokens: &[String]) -> Option<(usize, usize, CategoryLabel)> {
        let toks: Vec<&str> = tokens.iter().map(String::as_str).collect();
        for start in 0..toks.len() {
            let best = self
                .entries
                .iter()
                .filter(|e| e.keyword.len() <= toks.len() - start)
                .filter(|e| phrase_matches_at(&toks[start..], &e.keyword))
                .max_by_key(|e| e.keyword.len());
            if let Some(e) = best {
                return Some((start, start + e.keyword.len(), e.label));
            }
        }
        None
    }
}

fn phrase_occurs(tokens: &[&str], phrase: &[String]) -> bool {
    (0..tokens.len()).any(|i| tokens.len() - i >= phrase.len() && phrase_matches_at(&tokens[i..], phrase))
}

fn phrase_matches_at(tokens: &[&str], phrase: &[String]) -> bool {
    let last = phrase.len() - 1;
    phrase.iter().enumerate().all(|(j, kw)| {
        let tok = tokens[j];
        if j < last {
            tok == kw
        } else {
            word_matches(tok, kw)
        }
    })
}

fn word_matches(token: &str, keyword: &str) -> bool {
    if token == keyword {
        return true;
    }
    if let Some(stem) = token.strip_suffix("es") {
        if stem == keyword {
            return true;
        }
    }
    if let Some(stem) = token.strip_suffix('s') {
        if stem == keyword {
            return true;
        }
    }
    if let (Some(stem), Some(kw_stem)) = (token.strip_suffix("ies"), keyword.strip_suffix('y')) {
        if stem == kw_stem {
            return true;
        }
    }
    false
}
