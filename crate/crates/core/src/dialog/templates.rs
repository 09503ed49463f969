//! Response templates with `{name}` placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BotResponse;
use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.toml");
pub const MAX_CHIPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseTemplate {
    pub id: String,
    pub selector: String,
    pub pattern: String,
    #[serde(default)]
    pub chips: Vec<String>,
}

#[derive(Deserialize)]
struct TemplateFile {
    template: Vec<ResponseTemplate>,
}

#[derive(Debug, Clone)]
pub struct Templates {
    by_id: BTreeMap<String, ResponseTemplate>,
}

/// Placeholder names in `pattern`, in order of appearance.
fn placeholders(pattern: &str) -> Result<Vec<&str>> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::Template(format!("unterminated placeholder in `{pattern}`")))?;
        let name = &after[..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Template(format!("bad placeholder `{{{name}}}` in `{pattern}`")));
        }
        out.push(name);
        rest = &after[close + 1..];
    }
    Ok(out)
}

impl Templates {
    pub fn parse(text: &str) -> Result<Templates> {
        let file: TemplateFile = toml::from_str(text).map_err(|e| Error::Config(format!("templates: {e}")))?;
        let mut by_id = BTreeMap::new();
        for t in file.template {
            placeholders(&t.pattern).map_err(|e| Error::Config(format!("template `{}`: {e}", t.id)))?;
            if t.pattern.trim().is_empty() {
                return Err(Error::Config(format!("template `{}` has an empty pattern", t.id)));
            }
            if t.chips.len() > MAX_CHIPS {
                return Err(Error::Config(format!(
                    "template `{}` has more than {MAX_CHIPS} chips",
                    t.id
                )));
            }
            if by_id.contains_key(&t.id) {
                return Err(Error::Config(format!("duplicate template `{}`", t.id)));
            }
            by_id.insert(t.id.clone(), t);
        }
        Ok(Templates { by_id })
    }

    pub fn load(path: &Path) -> Result<Templates> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("read templates {}: {e}", path.display())))?;
        Templates::parse(&text)
    }

    pub fn shipped() -> Templates {
        Templates::parse(DEFAULT_TEMPLATES).expect("shipped templates parse")
    }

    pub fn get(&self, id: &str) -> Option<&ResponseTemplate> {
        self.by_id.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.by_id.keys().map(String::as_str)
    }

    /// Fails if any of `ids` is missing, so a bad template file is caught
    /// at startup rather than mid-conversation.
    pub fn require(&self, ids: &[&str]) -> Result<()> {
        let missing: BTreeSet<&str> = ids.iter().copied().filter(|id| !self.by_id.contains_key(*id)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "missing templates: {}",
                missing.into_iter().collect::<Vec<_>>().join(", ")
            )))
        }
    }

    /// Substitutes every placeholder; an unbound one is an error.
    pub fn render(&self, id: &str, bindings: &[(&str, String)]) -> Result<BotResponse> {
        let t = self
            .by_id
            .get(id)
            .ok_or_else(|| Error::Template(format!("no template `{id}`")))?;
        let mut text = String::with_capacity(t.pattern.len());
        let mut rest = t.pattern.as_str();
        while let Some(open) = rest.find('{') {
            text.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}').expect("validated at load");
            let name = &after[..close];
            let value = bindings
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Template(format!("template `{id}`: unbound placeholder {{{name}}}")))?;
            text.push_str(value);
            rest = &after[close + 1..];
        }
        text.push_str(rest);
        Ok(BotResponse {
            text,
            chips: t.chips.clone(),
            cards: Vec::new(),
            end_of_turn: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn progress_template_substitutes_numbers() {
        let t = Templates::shipped();
        let r = t
            .render(
                "goal_progress",
                &[
                    ("current", "2".into()),
                    ("target", "5".into()),
                    ("label", "fruit & vegetable".into()),
                    ("unit", "day".into()),
                    ("status", "3 to go".into()),
                ],
            )
            .unwrap();
        assert!(r.text.contains('2') && r.text.contains('5'));
        assert!(r.text.contains("fruit & vegetable"));
    }

    #[test]
    fn unbound_placeholder_fails() {
        let t = Templates::parse("[[template]]\nid = \"x\"\nselector = \"s\"\npattern = \"ate {food}\"\n").unwrap();
        assert!(matches!(t.render("x", &[]), Err(Error::Template(_))));
        assert!(matches!(t.render("missing", &[]), Err(Error::Template(_))));
    }

    #[test]
    fn confirmation_mentions_food_and_meal() {
        let t = Templates::shipped();
        let r = t
            .render(
                "log_confirm",
                &[
                    ("food", "laksa".into()),
                    ("meal", "lunch".into()),
                    ("day", "today".into()),
                    ("servings", "1".into()),
                ],
            )
            .unwrap();
        assert!(r.text.contains("laksa") && r.text.contains("lunch"));
        assert!(!r.text.is_empty());
    }

    #[test]
    fn bad_files_are_rejected() {
        let nine = (0..9).map(|i| format!("\"{i}\"")).collect::<Vec<_>>().join(",");
        let text = format!("[[template]]\nid = \"x\"\nselector = \"s\"\npattern = \"p\"\nchips = [{nine}]\n");
        assert!(Templates::parse(&text).is_err());
        assert!(Templates::parse("[[template]]\nid = \"x\"\nselector = \"s\"\npattern = \"p {oops\"\n").is_err());
        let dup = "[[template]]\nid = \"x\"\nselector = \"s\"\npattern = \"p\"\n";
        assert!(Templates::parse(&format!("{dup}{dup}")).is_err());
    }
}
