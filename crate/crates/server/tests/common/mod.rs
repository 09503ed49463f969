#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use chrono::{DateTime, Utc};
use foodbot_core::clock::VirtualClock;
use foodbot_core::corpus::{generate, CorpusSpec};
use foodbot_core::engine::{Engine, EngineParts};
use foodbot_core::graph::{KnowledgeGraph, Lexicon};
use foodbot_core::store::Store;
use foodbot_server::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

/// Monday 2024-01-08 08:00 at UTC+8.
pub const START: &str = "2024-01-08T00:00:00Z";

pub struct App {
    pub clock: VirtualClock,
    pub state: AppState,
}

pub fn graph() -> Arc<KnowledgeGraph> {
    let mut g = KnowledgeGraph::new(Lexicon::shipped());
    g.ingest_jsonl(
        &generate(&CorpusSpec {
            n_foods: 300,
            n_restaurants: 10,
            seed: 11,
        })
        .unwrap(),
    );
    Arc::new(g)
}

impl App {
    pub fn new() -> App {
        let clock = VirtualClock::new(START.parse().unwrap());
        let parts = EngineParts::shipped(Arc::new(Store::in_memory()), graph(), Arc::new(clock.clone()));
        let engine = Engine::new(parts).unwrap();
        App {
            clock,
            state: AppState::new(Arc::new(engine)),
        }
    }

    pub fn engine(&self) -> &Engine {
        self.state.engine()
    }

    /// Creates a user with default goals and returns a session token.
    pub fn user(&self, id: &str) -> String {
        let u = self.engine().create_user(id, id, 480, true).unwrap();
        self.engine().open_session(&u.user_id).unwrap().token
    }

    pub fn set(&self, t: &str) {
        self.clock.set(t.parse::<DateTime<Utc>>().unwrap());
    }

    pub async fn call(
        &self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value =
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
        (status, value)
    }

    pub async fn chat(&self, token: &str, text: &str, turn: Option<&str>) -> (StatusCode, Value) {
        let mut body = serde_json::json!({ "text": text });
        if let Some(t) = turn {
            body["turn_id"] = t.into();
        }
        self.call(Method::POST, "/api/chat", Some(token), Some(body)).await
    }
}
