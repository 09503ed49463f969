mod common;

use std::time::Duration;

use common::App;
use foodbot_server::router;
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn serve(app: &App) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let r = router(app.state.clone());
    tokio::spawn(async move { axum::serve(listener, r).await.unwrap() });
    format!("ws://{addr}/api/push")
}

async fn connect_header(url: &str, token: &str) -> Ws {
    let mut req = url.into_client_request().unwrap();
    req.headers_mut()
        .insert("authorization", format!("Bearer {token}").parse().unwrap());
    connect_async(req).await.unwrap().0
}

async fn connect_query(url: &str, token: &str) -> Ws {
    connect_async(format!("{url}?token={token}")).await.unwrap().0
}

/// Next prompt frame, or `None` if nothing arrives within `wait`.
async fn next(ws: &mut Ws, wait: Duration) -> Option<Value> {
    loop {
        match tokio::time::timeout(wait, ws.next()).await {
            Err(_) | Ok(None) => return None,
            Ok(Some(Ok(Message::Text(t)))) => {
                let v: Value = serde_json::from_str(&t).unwrap();
                assert_eq!(v["type"], "prompt");
                return Some(v["prompt"].clone());
            }
            Ok(Some(Ok(_))) => continue,
            Ok(Some(Err(e))) => panic!("{e}"),
        }
    }
}

async fn ack(ws: &mut Ws, prompt: &Value) {
    let frame = json!({"type": "ack", "prompt_id": prompt["prompt_id"]}).to_string();
    ws.send(Message::Text(frame.into())).await.unwrap();
}

const QUIET: Duration = Duration::from_millis(300);

#[tokio::test]
async fn live_prompt_arrives_within_a_second_as_cards() {
    let app = App::new();
    let t = app.user("ana");
    let url = serve(&app).await;
    let mut ws = connect_header(&url, &t).await;
    assert!(next(&mut ws, QUIET).await.is_none());
    // 11:00 at UTC+8.
    app.set("2024-01-08T03:00:00Z");
    assert_eq!(app.state.tick().await.unwrap(), 1);
    let p = next(&mut ws, Duration::from_secs(1)).await.expect("prompt within 1 s");
    assert_eq!(p["policy_id"], "lunch_recommendation");
    assert_eq!(p["created_at"], "2024-01-08T03:00:00Z");
    assert!(!p["payload"]["cards"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn reconnect_replays_missed_prompts_in_order_until_acked() {
    let app = App::new();
    let t = app.user("ana");
    let url = serve(&app).await;
    drop(connect_header(&url, &t).await);
    // A logged meal frees the slot the cap would hold for the log reminder.
    app.chat(&t, "I had oatmeal for breakfast", None).await;
    app.set("2024-01-08T03:00:00Z");
    app.state.tick().await.unwrap();
    app.set("2024-01-08T09:30:00Z");
    app.state.tick().await.unwrap();

    let mut ws = connect_query(&url, &t).await;
    let a = next(&mut ws, Duration::from_secs(1)).await.unwrap();
    let b = next(&mut ws, Duration::from_secs(1)).await.unwrap();
    assert_eq!(
        (&a["policy_id"], &b["policy_id"]),
        (&json!("lunch_recommendation"), &json!("dinner_recommendation"))
    );
    assert!(next(&mut ws, QUIET).await.is_none());
    ack(&mut ws, &a).await;
    drop(ws);

    // Unacked prompts come back; acked ones do not.
    tokio::time::sleep(Duration::from_millis(100)).await;
    let mut ws = connect_query(&url, &t).await;
    let again = next(&mut ws, Duration::from_secs(1)).await.unwrap();
    assert_eq!(again["prompt_id"], b["prompt_id"]);
    assert!(next(&mut ws, QUIET).await.is_none());
}

#[tokio::test]
async fn expired_prompts_are_not_replayed() {
    let app = App::new();
    let t = app.user("ana");
    let url = serve(&app).await;
    app.set("2024-01-08T03:00:00Z");
    app.state.tick().await.unwrap();
    // More than 24 h later.
    app.set("2024-01-09T03:30:00Z");
    app.state.tick().await.unwrap();
    let mut ws = connect_header(&url, &t).await;
    let mut seen = Vec::new();
    while let Some(p) = next(&mut ws, QUIET).await {
        seen.push(p);
    }
    assert!(!seen.is_empty());
    assert!(
        seen.iter().all(|p| p["created_at"] != "2024-01-08T03:00:00Z"),
        "{seen:?}"
    );
    assert!(seen
        .windows(2)
        .all(|w| w[0]["created_at"].as_str() <= w[1]["created_at"].as_str()));
}

#[tokio::test]
async fn prompts_go_only_to_their_user() {
    let app = App::new();
    let ana = app.user("ana");
    app.set("2024-01-08T02:00:00Z");
    let bo = {
        let u = app.engine().create_user("bo", "bo", 0, true).unwrap();
        app.engine().open_session(&u.user_id).unwrap().token
    };
    let url = serve(&app).await;
    let mut wa = connect_header(&url, &ana).await;
    let mut wb = connect_header(&url, &bo).await;
    // 11:00 for ana (UTC+8); still early morning for bo (UTC).
    app.set("2024-01-08T03:00:00Z");
    app.state.tick().await.unwrap();
    assert_eq!(next(&mut wa, Duration::from_secs(1)).await.unwrap()["user_id"], "ana");
    assert!(next(&mut wb, QUIET).await.is_none());
}

#[tokio::test]
async fn bad_token_upgrade_is_refused() {
    let app = App::new();
    let url = serve(&app).await;
    assert!(connect_async(format!("{url}?token=deadbeef")).await.is_err());
    assert!(connect_async(url.as_str()).await.is_err());
}
