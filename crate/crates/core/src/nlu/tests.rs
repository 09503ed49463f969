use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::text::tokenize;

/// Brute-force scorer: every placeholder may take any run of tokens that
/// reads as its type (or stay empty); the best assignment wins.
fn oracle_score(text: &str, utterance: &str, vocab: &BTreeSet<String>) -> f64 {
    let syn = Synonyms::shipped();
    let lex = crate::graph::Lexicon::shipped();
    let toks = tokenize(text);
    let mut lits = BTreeSet::new();
    let mut holes = Vec::new();
    for w in utterance.split_whitespace() {
        if let Some(name) = w.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
            holes.push(name.to_owned());
        } else {
            lits.extend(tokenize(w));
        }
    }
    let fits = |hole: &str, run: &[String]| -> bool {
        let whole =
            |c: fn(&Canonical) -> bool| matches!(syn.match_at(run, 0), Some((n, ref v)) if n == run.len() && c(v));
        match hole {
            "food" => run.iter().all(|t| !vocab.contains(t)),
            "meal" => whole(|c| matches!(c, Canonical::Meal(_))),
            "day" => whole(|c| matches!(c, Canonical::Day(_))),
            "period" => whole(|c| matches!(c, Canonical::Period(_))),
            "goal" => {
                whole(|c| matches!(c, Canonical::Goal(_)))
                    || matches!(lex.find_in(run), Some((0, e, l)) if e == run.len() && l != CategoryLabel::Other)
            }
            "option" => {
                run.len() == 1 && (syn.number_at(run, 0).is_some() || whole(|c| matches!(c, Canonical::Ordinal(_))))
            }
            _ => run.len() == 1 && syn.number_at(run, 0).is_some(),
        }
    };
    #[allow(clippy::too_many_arguments)]
    fn go(
        toks: &[String],
        used: &mut Vec<bool>,
        holes: &[String],
        filled: usize,
        lits: &BTreeSet<String>,
        best: &mut f64,
        total: usize,
        fits: &dyn Fn(&str, &[String]) -> bool,
    ) {
        let Some((hole, more)) = holes.split_first() else {
            let rest: BTreeSet<&str> = toks
                .iter()
                .zip(used.iter())
                .filter(|(_, u)| !**u)
                .map(|(t, _)| t.as_str())
                .collect();
            let inter = lits.iter().filter(|l| rest.contains(l.as_str())).count();
            let union = lits.len() + rest.len() - inter + total;
            if union > 0 {
                *best = best.max((inter + filled) as f64 / union as f64);
            }
            return;
        };
        go(toks, used, more, filled, lits, best, total, fits);
        for s in 0..toks.len() {
            for e in s + 1..=toks.len() {
                if used[s..e].iter().any(|u| *u) || !fits(hole, &toks[s..e]) {
                    continue;
                }
                used[s..e].iter_mut().for_each(|u| *u = true);
                go(toks, used, more, filled + 1, lits, best, total, fits);
                used[s..e].iter_mut().for_each(|u| *u = false);
            }
        }
    }
    let mut best = 0.0;
    go(
        &toks,
        &mut vec![false; toks.len()],
        &holes,
        0,
        &lits,
        &mut best,
        holes.len(),
        &fits,
    );
    best
}

fn vocabulary(examples: &[TrainingExample]) -> BTreeSet<String> {
    examples
        .iter()
        .flat_map(|e| {
            e.utterance
                .split_whitespace()
                .filter(|w| !w.starts_with('{'))
                .flat_map(tokenize)
                .collect::<Vec<_>>()
        })
        .chain(Synonyms::shipped().answer_words())
        .collect()
}

fn oracle_argmax(text: &str, examples: &[TrainingExample]) -> (Intent, f64) {
    let vocab = vocabulary(examples);
    let mut best = (Intent::Unknown, 0.0);
    for intent in Intent::ALL {
        let s = examples
            .iter()
            .filter(|e| e.intent == intent)
            .map(|e| oracle_score(text, &e.utterance, &vocab))
            .fold(0.0, f64::max);
        if s > best.1 {
            best = (intent, s);
        }
    }
    best
}

#[test]
fn shipped_file_has_twenty_examples_per_intent() {
    let nlu = Nlu::shipped();
    for intent in Intent::ALL.into_iter().filter(|i| *i != Intent::Unknown) {
        let n = nlu.example_count(intent);
        assert!((20..=30).contains(&n), "{intent}: {n} examples");
    }
}

#[test]
fn logs_food_with_meal() {
    let nlu = Nlu::shipped();
    let text = "I had chicken rice for lunch";
    let r = nlu.detect_intent(text);
    assert_eq!(r.intent, Intent::LogFood);
    assert_eq!(r.slots.food_name.as_deref(), Some("chicken rice"));
    assert_eq!(r.slots.meal_occasion, Some(MealOccasion::Lunch));
    assert_eq!(r.confidence, 1.0);
    assert_eq!(oracle_argmax(text, &shipped_examples()).0, Intent::LogFood);
}

#[test]
fn empty_text_is_unknown() {
    let nlu = Nlu::shipped();
    for t in ["", "   ", "?!"] {
        let r = nlu.detect_intent(t);
        assert_eq!(r.intent, Intent::Unknown);
        assert_eq!(r.confidence, 0.0);
    }
}

#[test]
fn goal_query_names_category() {
    let nlu = Nlu::shipped();
    let text = "how am I doing on my fish goal";
    let r = nlu.detect_intent(text);
    assert_eq!(r.intent, Intent::QueryGoal);
    assert_eq!(r.slots.goal_type, Some(CategoryLabel::Fish));
    assert_eq!(oracle_argmax(text, &shipped_examples()).0, Intent::QueryGoal);
}

#[test]
fn extraction_examples() {
    let nlu = Nlu::shipped();
    let s = nlu.extract_slots("log 2 glasses of water", Intent::LogWater);
    assert_eq!(
        s,
        SlotSet {
            quantity: Some(2),
            ..SlotSet::default()
        }
    );

    let s = nlu.extract_slots("i ate an apple", Intent::LogFood);
    assert_eq!(s.food_name.as_deref(), Some("apple"));
    assert_eq!(s.meal_occasion, None);

    let s = nlu.extract_slots("dinner was grilled salmon", Intent::LogFood);
    assert_eq!(s.meal_occasion, Some(MealOccasion::Dinner));
    assert_eq!(s.food_name.as_deref(), Some("grilled salmon"));

    let s = nlu.extract_slots("i drank two glasses of water yesterday", Intent::LogWater);
    assert_eq!(s.quantity, Some(2));
    assert_eq!(s.date_ref, Some(DayRef::Yesterday));

    let s = nlu.extract_slots("set my fruit and veg goal to 5 a day", Intent::SetGoal);
    assert_eq!(s.goal_type, Some(CategoryLabel::FruitVeg));
    assert_eq!(s.target, Some(5));
    assert_eq!(s.period, Some(Period::Daily));
}

#[test]
fn only_relevant_slots_are_filled() {
    let nlu = Nlu::shipped();
    let s = nlu.extract_slots("hello on monday at lunch", Intent::Greet);
    assert!(s.is_empty());
    let s = nlu.extract_slots("suggest something for dinner today", Intent::RequestRecommendation);
    assert_eq!(s.meal_occasion, Some(MealOccasion::Dinner));
    assert_eq!(s.date_ref, None);
}

#[test]
fn confirmations_carry_affirmation() {
    let nlu = Nlu::shipped();
    assert_eq!(nlu.detect_intent("yes").affirmation, Some(true));
    assert_eq!(nlu.detect_intent("no thanks").affirmation, Some(false));
    assert_eq!(nlu.detect_intent("i had laksa").affirmation, None);
}

#[test]
fn every_shipped_example_filled_detects_exactly() {
    let nlu = Nlu::shipped();
    for ex in shipped_examples() {
        let text = fill(&ex.utterance);
        let r = nlu.detect_intent(&text);
        assert_eq!(
            (r.intent, r.confidence),
            (ex.intent, 1.0),
            "`{text}` from `{}`",
            ex.utterance
        );
    }
}

fn fill(utterance: &str) -> String {
    utterance
        .replace("{food}", "chicken rice")
        .replace("{meal}", "lunch")
        .replace("{quantity}", "2")
        .replace("{goal}", "fish")
        .replace("{target}", "3")
        .replace("{period}", "week")
        .replace("{day}", "yesterday")
        .replace("{option}", "2")
}

#[test]
fn added_example_detects_exactly() {
    let store = Store::in_memory();
    let nlu = Nlu::shipped();
    let before = nlu.examples().len();
    assert_eq!(nlu.add_examples(&[], Some(&store)).unwrap(), 0);
    assert_eq!(nlu.examples().len(), before);

    nlu.add_examples(
        &[TrainingExample::new(Intent::RequestRecommendation, "gimme lunch ideas")],
        Some(&store),
    )
    .unwrap();
    let r = nlu.detect_intent("gimme lunch ideas");
    assert_eq!((r.intent, r.confidence), (Intent::RequestRecommendation, 1.0));

    let fresh = Nlu::shipped();
    assert_eq!(fresh.load_persisted(&store).unwrap(), 1);
    assert_eq!(
        fresh.detect_intent("gimme lunch ideas").intent,
        Intent::RequestRecommendation
    );
}

#[test]
fn add_examples_rejects_unknown_and_empty() {
    let nlu = Nlu::shipped();
    assert!(nlu
        .add_examples(&[TrainingExample::new(Intent::Unknown, "whatever")], None)
        .is_err());
    assert!(nlu
        .add_examples(&[TrainingExample::new(Intent::Help, "  ")], None)
        .is_err());
    assert!(nlu
        .add_examples(&[TrainingExample::new(Intent::Help, "i need {nonsense}")], None)
        .is_err());
    assert!("not_an_intent".parse::<Intent>().is_err());
}

#[test]
fn closed_loop_fixes_misclassifications() {
    let nlu = Nlu::shipped();
    let fixes = [
        (Intent::QueryJournal, "whats on the menu so far lol"),
        (Intent::Help, "huh im lost here"),
        (Intent::Greet, "top of the morning"),
        (Intent::RequestRecommendation, "feed me something nice"),
        (Intent::LogWater, "hydrated myself twice"),
    ];
    let wrong = fixes.iter().filter(|(i, t)| nlu.detect_intent(t).intent != *i).count();
    assert!(wrong >= 3, "fixture should start mostly misclassified");
    let new: Vec<_> = fixes.iter().map(|(i, t)| TrainingExample::new(*i, *t)).collect();
    nlu.add_examples(&new, None).unwrap();
    for (i, t) in fixes {
        assert_eq!(nlu.detect_intent(t).intent, i, "{t}");
    }
}

proptest! {
    #[test]
    fn detection_is_total_and_deterministic(text in "[a-z0-9 ',.?]{0,60}") {
        let nlu = Nlu::shipped();
        let a = nlu.detect_intent(&text);
        let b = nlu.detect_intent(&text);
        prop_assert_eq!(&a, &b);
        prop_assert!((0.0..=1.0).contains(&a.confidence));
        if a.intent == Intent::Unknown {
            prop_assert!(a.confidence < nlu.threshold());
        } else {
            prop_assert!(a.confidence >= nlu.threshold());
        }
    }

    #[test]
    fn slots_are_closed_over_input(
        words in proptest::collection::vec(
            prop_oneof![
                Just("i"), Just("had"), Just("for"), Just("lunch"), Just("two"), Just("3"),
                Just("glasses"), Just("water"), Just("laksa"), Just("fish"), Just("week"),
                Just("yesterday"), Just("monday"), Just("goal"), Just("nasi"), Just("lemak"),
                Just("brekkie"), Just("set"), Just("my"), Just("to"),
            ],
            0..10,
        )
    ) {
        let nlu = Nlu::shipped();
        let text = words.join(" ");
        let r = nlu.detect_intent(&text);
        let norm = tokenize(&text).join(" ");
        if let Some(f) = &r.slots.food_name {
            prop_assert!(norm.contains(f.as_str()));
        }
        let relevant = r.intent.relevant_slots();
        let s = &r.slots;
        prop_assert!(s.food_name.is_none() || relevant.contains(&SlotKind::Food));
        prop_assert!(s.meal_occasion.is_none() || relevant.contains(&SlotKind::Meal));
        prop_assert!(s.goal_type.is_none() || relevant.contains(&SlotKind::Goal));
        prop_assert!(s.date_ref.is_none() || relevant.contains(&SlotKind::Day));
        for n in [s.quantity, s.target, s.option_index].into_iter().flatten() {
            prop_assert!(n > 0);
        }
    }
}

#[test]
fn scorer_agrees_with_brute_force_on_paraphrases() {
    let nlu = Nlu::shipped();
    let examples = shipped_examples();
    for text in [
        "I had chicken rice for lunch",
        "how am I doing on my fish goal",
        "log 2 glasses of water",
        "dinner was grilled salmon",
        "what did i eat yesterday",
        "remove the laksa from lunch",
        "recommend me something for dinner",
        "set my fish goal to 3 per week",
        "the second one",
        "hello there",
    ] {
        let r = nlu.detect_intent(text);
        let (intent, score) = oracle_argmax(text, &examples);
        assert!(
            (r.confidence - score).abs() < 1e-9,
            "{text}: {} vs {score}",
            r.confidence
        );
        if score >= nlu.threshold() {
            assert_eq!(r.intent, intent, "{text}");
        }
    }
}
