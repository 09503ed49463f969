//! Websocket push channel.
//!
//! On connect the user's undelivered, unexpired prompts are replayed in
//! creation order, then new prompts stream as they are emitted. A prompt
//! stays in the outbox until the client acks it, so delivery is
//! at-least-once; clients dedupe by `prompt_id`.

use std::collections::HashSet;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::HeaderMap;
use axum::response::Response;
use foodbot_core::jit::NotificationPrompt;
use foodbot_core::types::UserId;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use crate::{authorize, bearer, blocking, ApiError, AppState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Prompt { prompt: NotificationPrompt },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientFrame {
    Ack { prompt_id: String },
}

#[derive(Debug, Deserialize)]
pub(crate) struct TokenQuery {
    token: Option<String>,
}

pub(crate) async fn upgrade(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let token = bearer(&headers)
        .or(q.token)
        .ok_or_else(|| ApiError(foodbot_core::Error::Unauthorized("missing token".into())))?;
    let user = authorize(&state, token).await?;
    Ok(ws.on_upgrade(move |socket| session(state, user.user_id, socket)))
}

async fn outbox(state: &AppState, user: &UserId) -> Vec<NotificationPrompt> {
    let engine = state.engine().clone();
    let user = user.clone();
    blocking(move || engine.outbox(&user)).await.unwrap_or_else(|e| {
        tracing::error!(error = %e, "outbox read failed");
        Vec::new()
    })
}

async fn send(socket: &mut futures::stream::SplitSink<WebSocket, Message>, prompt: NotificationPrompt) -> bool {
    let frame = serde_json::to_string(&ServerFrame::Prompt { prompt }).expect("prompt serializes");
    socket.send(Message::Text(frame.into())).await.is_ok()
}

async fn session(state: AppState, user: UserId, socket: WebSocket) {
    // Subscribe before reading the outbox so nothing falls in between.
    let mut live = state.subscribe();
    let (mut tx, mut rx) = socket.split();
    let mut sent = HashSet::new();
    for p in outbox(&state, &user).await {
        sent.insert(p.prompt_id.clone());
        if !send(&mut tx, p).await {
            return;
        }
    }
    loop {
        tokio::select! {
            msg = live.recv() => match msg {
                Ok(p) if p.user_id == user && sent.insert(p.prompt_id.clone()) => {
                    if !send(&mut tx, p).await {
                        return;
                    }
                }
                Ok(_) => {}
                Err(RecvError::Lagged(n)) => {
                    tracing::warn!(user = %user, skipped = n, "push subscriber lagged; resyncing from outbox");
                    for p in outbox(&state, &user).await {
                        if sent.insert(p.prompt_id.clone()) && !send(&mut tx, p).await {
                            return;
                        }
                    }
                }
                Err(RecvError::Closed) => return,
            },
            incoming = rx.next() => match incoming {
                Some(Ok(Message::Text(t))) => match serde_json::from_str::<ClientFrame>(&t) {
                    Ok(ClientFrame::Ack { prompt_id }) => {
                        let engine = state.engine().clone();
                        let user = user.clone();
                        if let Err(e) = blocking(move || engine.mark_delivered(&user, &prompt_id)).await {
                            tracing::warn!(error = %e, "ack rejected");
                        }
                    }
                    Err(e) => tracing::debug!(error = %e, "ignoring malformed client frame"),
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
