use std::sync::Arc;

use chrono::Duration;

use super::*;
use crate::clock::VirtualClock;
use crate::fixtures::{graph_of, ts};

struct Fx {
    clock: VirtualClock,
    engine: Engine,
    token: String,
    user: UserProfile,
}

fn fx() -> Fx {
    let clock = VirtualClock::new(ts("2024-01-09T04:00:00Z"));
    let store = Arc::new(Store::in_memory());
    let graph = Arc::new(graph_of(&["laksa", "apple", "salmon", "brown rice"]));
    let engine = Engine::new(EngineParts::shipped(store, graph, Arc::new(clock.clone()))).unwrap();
    let user = engine.create_user("ana", "Ana", 480, true).unwrap();
    let token = engine.open_session(&user.user_id).unwrap().token;
    Fx {
        clock,
        engine,
        token,
        user,
    }
}

#[test]
fn full_sentence_logs_once_and_replays_by_turn_id() {
    let f = fx();
    let req = ChatRequest::text("I had laksa for lunch").with_turn("c1");
    let a = f.engine.chat(&f.token, &req).unwrap();
    assert_eq!(a.intent, Intent::LogFood);
    assert_eq!(a.context, ActiveContext::None);
    f.clock.advance(Duration::seconds(5));
    let b = f.engine.chat(&f.token, &req).unwrap();
    assert_eq!(a, b);
    let entries = f.engine.journal_day(&f.user, None).unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].as_food().unwrap().meal_occasion, MealOccasion::Lunch);
}

#[test]
fn same_turn_id_in_two_sessions_logs_twice() {
    let f = fx();
    let other = f.engine.open_session(&f.user.user_id).unwrap().token;
    let req = ChatRequest::text("I had an apple for breakfast").with_turn("1");
    f.engine.chat(&f.token, &req).unwrap();
    f.engine.chat(&other, &req).unwrap();
    assert_eq!(f.engine.journal_day(&f.user, None).unwrap().len(), 2);
}

#[test]
fn multi_turn_context_survives_between_requests() {
    let f = fx();
    let a = f.engine.chat(&f.token, &ChatRequest::text("I ate salmon")).unwrap();
    assert_eq!(a.context, ActiveContext::AwaitingMealOccasion);
    let b = f.engine.chat(&f.token, &ChatRequest::text("dinner")).unwrap();
    assert_eq!(b.context, ActiveContext::None);
    let e = f.engine.journal_day(&f.user, None).unwrap();
    assert_eq!(e.len(), 1);
    assert_eq!(e[0].as_food().unwrap().meal_occasion, MealOccasion::Dinner);
    assert!(a.turn_id.starts_with("auto-") && a.turn_id != b.turn_id);
}

#[test]
fn bad_tokens_are_unauthorized() {
    let f = fx();
    for t in ["", "nothex!", "00112233445566778899aabbccddeeff"] {
        let err = f.engine.chat(t, &ChatRequest::text("hi")).unwrap_err();
        assert!(matches!(err, Error::Unauthorized(_)), "{t}: {err}");
    }
}

#[test]
fn malformed_requests_are_rejected() {
    let f = fx();
    let bad = [
        ChatRequest::text("x".repeat(MAX_TEXT_BYTES + 1)),
        ChatRequest::text("   "),
        ChatRequest::default(),
        ChatRequest {
            option_index: Some(1),
            ..ChatRequest::text("a")
        },
        ChatRequest::option(0),
        ChatRequest::text("hi").with_turn("a/b"),
        ChatRequest::text("hi").with_turn("x".repeat(MAX_TURN_ID + 1)),
    ];
    for req in bad {
        assert!(
            matches!(f.engine.chat(&f.token, &req), Err(Error::Validation(_))),
            "{req:?}"
        );
    }
    assert!(f
        .engine
        .chat(&f.token, &ChatRequest::text("x".repeat(MAX_TEXT_BYTES)))
        .is_ok());
}

#[test]
fn failed_command_restores_state_and_is_retryable() {
    let f = fx();
    f.engine.chat(&f.token, &ChatRequest::text("I ate salmon")).unwrap();
    let (session, _) = f.engine.authorize(&f.token).unwrap();
    let before = f.engine.dialog_state(&session).unwrap();
    // A journal record squatting on the turn key makes the log fail.
    let jkey = format!("t/{}/{}.c9", f.user.user_id.as_str(), session.session_id);
    f.engine.store().put(Family::Entries, &jkey, &"garbage").unwrap();
    let req = ChatRequest::text("lunch").with_turn("c9");
    let r = f.engine.chat(&f.token, &req).unwrap();
    assert_eq!(r.response.text, f.engine.dialog().render("apology", &[]).unwrap().text);
    assert_eq!(f.engine.dialog_state(&session).unwrap(), before);
    f.engine.store().delete(Family::Entries, &jkey).unwrap();
    let r = f.engine.chat(&f.token, &req).unwrap();
    assert_eq!(r.context, ActiveContext::None);
    assert_eq!(f.engine.journal_day(&f.user, None).unwrap().len(), 1);
}

#[test]
fn interrupted_turn_is_completed_on_retry() {
    let f = fx();
    let (session, _) = f.engine.authorize(&f.token).unwrap();
    let req = ChatRequest::text("I had laksa for lunch").with_turn("k");
    let reply = f.engine.chat(&f.token, &req).unwrap();
    // Simulate a crash after the record was written but before commands ran.
    let rkey = turn_key(&session.session_id, "k");
    let mut rec: TurnRecord = f.engine.store().get(Family::Turns, &rkey).unwrap().unwrap();
    rec.done = false;
    let entry = f.engine.journal_day(&f.user, None).unwrap()[0].entry_id().to_string();
    f.engine.delete_entry(&f.user, &entry).unwrap();
    f.engine
        .store()
        .delete(Family::Entries, &format!("t/ana/{}.k", session.session_id))
        .unwrap();
    f.engine.store().put(Family::Turns, &rkey, &rec).unwrap();
    assert_eq!(f.engine.chat(&f.token, &req).unwrap(), reply);
    assert_eq!(f.engine.journal_day(&f.user, None).unwrap().len(), 1);
    let rec: TurnRecord = f.engine.store().get(Family::Turns, &rkey).unwrap().unwrap();
    assert!(rec.done);
}

#[test]
fn option_index_selects_a_card() {
    let f = fx();
    let a = f
        .engine
        .chat(&f.token, &ChatRequest::text("I had salmn for dinner"))
        .unwrap();
    assert_eq!(a.context, ActiveContext::AwaitingFoodSelection);
    f.engine.chat(&f.token, &ChatRequest::option(1)).unwrap();
    let e = f.engine.journal_day(&f.user, None).unwrap();
    assert_eq!(e.len(), 1);
}

#[test]
fn persisted_examples_survive_restart() {
    let f = fx();
    let ex = TrainingExample::new(Intent::QueryJournal, "what did i munch lately");
    assert_eq!(f.engine.add_examples(&[ex]).unwrap(), 1);
    let engine = Engine::new(EngineParts::shipped(
        f.engine.store().clone(),
        Arc::new(graph_of(&["laksa"])),
        Arc::new(f.clock.clone()),
    ))
    .unwrap();
    assert_eq!(
        engine.nlu().detect_intent("what did i munch lately").intent,
        Intent::QueryJournal
    );
}
