mod common;

use axum::http::{Method, StatusCode};
use common::App;
use serde_json::{json, Value};

#[tokio::test]
async fn laksa_turn_logs_once_and_retries_are_cached() {
    let app = App::new();
    let t = app.user("ana");
    let (s, a) = app.chat(&t, "I had laksa for lunch", Some("turn-1")).await;
    assert_eq!(s, StatusCode::OK, "{a}");
    assert_eq!(a["turn_id"], "turn-1");
    assert_eq!(a["context"], "none");
    assert!(a["response"]["text"].as_str().unwrap().contains("laksa"), "{a}");
    let (_, b) = app.chat(&t, "I had laksa for lunch", Some("turn-1")).await;
    assert_eq!(a, b);
    let (_, j) = app.call(Method::GET, "/api/journal", Some(&t), None).await;
    let entries = j["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["raw_name"], "laksa");
    assert_eq!(entries[0]["meal_occasion"], "lunch");
}

#[tokio::test]
async fn concurrent_duplicates_have_one_side_effect() {
    let app = std::sync::Arc::new(App::new());
    let t = app.user("ana");
    let mut handles = Vec::new();
    for _ in 0..8 {
        let (app, t) = (app.clone(), t.clone());
        handles.push(tokio::spawn(async move {
            app.chat(&t, "I had an apple for breakfast", Some("dup")).await
        }));
    }
    let mut replies = Vec::new();
    for h in handles {
        let (s, v) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        replies.push(v);
    }
    assert!(replies.windows(2).all(|w| w[0] == w[1]));
    let (_, j) = app.call(Method::GET, "/api/journal", Some(&t), None).await;
    assert_eq!(j["entries"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn validation_errors_are_400() {
    let app = App::new();
    let t = app.user("ana");
    let (s, v) = app.chat(&t, &"a".repeat(1025), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "validation");
    let (s, _) = app
        .call(
            Method::POST,
            "/api/chat",
            Some(&t),
            Some(json!({"text": "hi", "option_index": 1})),
        )
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = app.call(Method::GET, "/api/recommendations?k=0", Some(&t), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn journal_pages_by_day() {
    let app = App::new();
    let t = app.user("ana");
    for (i, text) in [
        "I had oatmeal for breakfast",
        "I had laksa for lunch",
        "I had an apple as a snack",
    ]
    .iter()
    .enumerate()
    {
        let (s, v) = app.chat(&t, text, Some(&format!("d{i}"))).await;
        assert_eq!((s, &v["context"]), (StatusCode::OK, &Value::from("none")), "{v}");
    }
    let (_, j) = app
        .call(Method::GET, "/api/journal?day=2024-01-08", Some(&t), None)
        .await;
    assert_eq!(j["entries"].as_array().unwrap().len(), 3);
    let (_, j) = app
        .call(Method::GET, "/api/journal?day=2024-01-07", Some(&t), None)
        .await;
    assert!(j["entries"].as_array().unwrap().is_empty());
    let (s, _) = app
        .call(Method::GET, "/api/journal?day=yesterday", Some(&t), None)
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn goals_view_mirrors_active_goals() {
    let app = App::new();
    let t = app.user("ana");
    let (_, c) = app.chat(&t, "I had salmon for lunch", None).await;
    assert_eq!(c["context"], "none", "{c}");
    // Progress covers [window start, now).
    app.clock.advance(chrono::Duration::seconds(1));
    let (_, g) = app.call(Method::GET, "/api/goals", Some(&t), None).await;
    let goals = g["goals"].as_array().unwrap();
    let user = app.engine().authorize(&t).unwrap().1;
    let direct = app.engine().progress(&user).unwrap();
    assert_eq!(goals.len(), direct.len());
    assert_eq!(g["goals"], serde_json::to_value(&direct).unwrap());
    let fish = goals.iter().find(|g| g["goal_type"] == "fish").unwrap();
    assert_eq!((fish["current"].as_u64(), fish["target"].as_u64()), (Some(1), Some(2)));
}

#[tokio::test]
async fn recommendations_view_equals_module_output() {
    let app = App::new();
    let t = app.user("ana");
    for i in 0..3 {
        app.chat(&t, "I had laksa for lunch", Some(&format!("r{i}"))).await;
    }
    let (s, r) = app
        .call(Method::GET, "/api/recommendations?meal=lunch&k=5", Some(&t), None)
        .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    let user = app.engine().authorize(&t).unwrap().1;
    let direct = app
        .engine()
        .recommendations(&user, Some(foodbot_core::types::MealOccasion::Lunch), Some(5))
        .unwrap();
    let items = r["items"].as_array().unwrap();
    assert_eq!(items.len(), direct.len());
    for (item, d) in items.iter().zip(&direct) {
        assert_eq!(item["food_id"], serde_json::to_value(d.food_id).unwrap());
        assert_eq!(item["score"].as_f64().unwrap(), d.score);
    }
    assert_eq!(items[0]["name"], "laksa");
}

#[tokio::test]
async fn weekly_report_endpoint() {
    let app = App::new();
    let t = app.user("ana");
    let (s, r) = app
        .call(Method::GET, "/api/report?week=2024-01-10", Some(&t), None)
        .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["week_start"], "2024-01-08");
    assert_eq!(r["goal_count"], 6);
}

#[tokio::test]
async fn edit_and_delete_own_entries() {
    let app = App::new();
    let t = app.user("ana");
    app.chat(&t, "I had laksa for lunch", None).await;
    let (_, j) = app.call(Method::GET, "/api/journal", Some(&t), None).await;
    let id = j["entries"][0]["entry_id"].as_str().unwrap().to_string();
    let uri = format!("/api/journal/{id}");
    let (s, e) = app
        .call(Method::PATCH, &uri, Some(&t), Some(json!({"servings": 2})))
        .await;
    assert_eq!(s, StatusCode::OK, "{e}");
    assert_eq!(e["servings"], 2);
    let (s, _) = app.call(Method::DELETE, &uri, Some(&t), None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = app.call(Method::DELETE, &uri, Some(&t), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

/// Every endpoint × {no token, garbage token, other user's token}.
#[tokio::test]
async fn authorization_matrix() {
    let app = App::new();
    let ana = app.user("ana");
    let bo = app.user("bo");
    app.chat(&ana, "I had laksa for lunch", None).await;
    let (_, j) = app.call(Method::GET, "/api/journal", Some(&ana), None).await;
    let ana_entry = j["entries"][0].clone();
    let entry_uri = format!("/api/journal/{}", ana_entry["entry_id"].as_str().unwrap());

    let endpoints: Vec<(Method, String, Option<Value>)> = vec![
        (Method::POST, "/api/chat".into(), Some(json!({"text": "hi"}))),
        (Method::GET, "/api/journal".into(), None),
        (Method::PATCH, entry_uri.clone(), Some(json!({"servings": 9}))),
        (Method::DELETE, entry_uri.clone(), None),
        (Method::GET, "/api/goals".into(), None),
        (Method::GET, "/api/recommendations".into(), None),
        (Method::GET, "/api/report".into(), None),
    ];
    for (m, uri, body) in &endpoints {
        for token in [None, Some("deadbeef"), Some("not a token")] {
            let (s, v) = app.call(m.clone(), uri, token, body.clone()).await;
            assert_eq!(s, StatusCode::UNAUTHORIZED, "{m} {uri} {token:?}: {v}");
            assert_eq!(v["error"], "unauthorized");
        }
    }
    // Bo cannot see or touch Ana's entry, and cannot tell it exists.
    let (s, v) = app
        .call(Method::PATCH, &entry_uri, Some(&bo), Some(json!({"servings": 9})))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{v}");
    let (s, _) = app.call(Method::DELETE, &entry_uri, Some(&bo), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, j) = app.call(Method::GET, "/api/journal", Some(&bo), None).await;
    assert!(j["entries"].as_array().unwrap().is_empty());
    let (_, g) = app.call(Method::GET, "/api/goals", Some(&bo), None).await;
    assert!(g["goals"].as_array().unwrap().iter().all(|g| g["current"] == 0));
    let (_, j) = app.call(Method::GET, "/api/journal", Some(&ana), None).await;
    assert_eq!(j["entries"][0], ana_entry);
}

#[tokio::test]
async fn multi_turn_chip_flow() {
    let app = App::new();
    let t = app.user("ana");
    let (_, a) = app.chat(&t, "I ate salmon", None).await;
    assert_eq!(a["context"], "awaiting_meal_occasion");
    let chips: Vec<&str> = a["response"]["chips"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    assert!(chips.contains(&"lunch"), "{chips:?}");
    let (_, b) = app.chat(&t, "lunch", None).await;
    assert_eq!(b["context"], "none");
    let (_, a) = app.chat(&t, "I had chiken rice for dinner", None).await;
    assert_eq!(a["context"], "awaiting_food_selection");
    let cards = a["response"]["cards"].as_array().unwrap();
    let second = cards[1]["title"].as_str().unwrap().to_string();
    let (s, _) = app
        .call(Method::POST, "/api/chat", Some(&t), Some(json!({"option_index": 2})))
        .await;
    assert_eq!(s, StatusCode::OK);
    let (_, j) = app.call(Method::GET, "/api/journal", Some(&t), None).await;
    assert_eq!(format!("2. {}", j["entries"][1]["raw_name"].as_str().unwrap()), second);
}

#[tokio::test]
async fn health() {
    let app = App::new();
    let (s, v) = app.call(Method::GET, "/api/health", None, None).await;
    assert_eq!((s, v), (StatusCode::OK, Value::from("ok")));
}
