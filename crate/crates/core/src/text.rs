//! Name normalization, tokenization and character-trigram similarity.

use std::collections::HashSet;

/// Lowercases, replaces punctuation with spaces, collapses whitespace.
///
/// Idempotent: `normalize_name(&normalize_name(x)) == normalize_name(x)`.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Normalized word tokens.
pub fn tokenize(raw: &str) -> Vec<String> {
    normalize_name(raw)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Character trigrams of an already-normalized string, padded with two
/// leading spaces and one trailing space so short names still produce grams.
pub fn trigrams(normalized: &str) -> HashSet<[char; 3]> {
    if normalized.is_empty() {
        return HashSet::new();
    }
    let padded: Vec<char> = "  "
        .chars()
        .chain(normalized.chars())
        .chain(std::iter::once(' '))
        .collect();
    padded.windows(3).map(|w| [w[0], w[1], w[2]]).collect()
}

/// Jaccard similarity of two trigram sets. Empty sets score 0.
pub fn jaccard(a: &HashSet<[char; 3]>, b: &HashSet<[char; 3]>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Trigram Jaccard similarity of two raw strings after normalization.
pub fn trigram_similarity(a: &str, b: &str) -> f64 {
    jaccard(&trigrams(&normalize_name(a)), &trigrams(&normalize_name(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_case_punctuation_and_spacing() {
        assert_eq!(normalize_name("  Chicken  RICE!! "), "chicken rice");
        assert_eq!(normalize_name("chicken rice"), "chicken rice");
        assert_eq!(normalize_name("Nasi-Lemak (Set A)"), "nasi lemak set a");
        assert_eq!(normalize_name(""), "");
        assert_eq!(normalize_name("!!!"), "");
    }

    #[test]
    fn trigrams_of_short_names() {
        let t = trigrams("a");
        assert_eq!(t.len(), 2);
        assert!(trigrams("").is_empty());
    }

    #[test]
    fn identical_strings_score_one() {
        assert_eq!(trigram_similarity("laksa", "Laksa!"), 1.0);
        assert_eq!(trigram_similarity("", "laksa"), 0.0);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_name(&s);
            prop_assert_eq!(normalize_name(&once), once.clone());
            prop_assert!(!once.starts_with(' ') && !once.ends_with(' '));
            prop_assert!(!once.contains("  "));
        }

        #[test]
        fn similarity_is_symmetric_and_bounded(a in "[a-z ]{0,20}", b in "[a-z ]{0,20}") {
            let ab = trigram_similarity(&a, &b);
            let ba = trigram_similarity(&b, &a);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
