//! Shared unit-test fixtures.

use std::sync::Arc;

use chrono::{DateTime, Utc};

use crate::clock::{Clock, VirtualClock};
use crate::graph::{KnowledgeGraph, Lexicon};
use crate::store::Store;
use crate::types::UserId;
use crate::users::UserProfile;

pub fn ts(s: &str) -> DateTime<Utc> {
    s.parse().expect("rfc3339 timestamp")
}

/// Generic foods, one per name, ids in name order.
pub fn graph_of(names: &[&str]) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new(Lexicon::shipped());
    let text: String = names
        .iter()
        .map(|n| {
            format!(
                "{{\"name\":{},\"source\":\"generic\"}}\n",
                serde_json::to_string(n).unwrap()
            )
        })
        .collect();
    let report = g.ingest_jsonl(&text);
    assert_eq!(report.rejected, 0);
    g
}

pub fn user(id: &str, tz: i32) -> UserProfile {
    UserProfile::new(UserId::new(id), id, tz, ts("2024-01-01T00:00:00Z")).unwrap()
}

pub struct Env {
    pub store: Arc<Store>,
    pub graph: Arc<KnowledgeGraph>,
    pub clock: VirtualClock,
}

impl Env {
    pub fn new(names: &[&str], start: &str) -> Env {
        Env {
            store: Arc::new(Store::in_memory()),
            graph: Arc::new(graph_of(names)),
            clock: VirtualClock::new(ts(start)),
        }
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        Arc::new(self.clock.clone())
    }
}
