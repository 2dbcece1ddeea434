//! HTTP and WebSocket routes.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::registry::{CreateSession, PostMessage, Registry, Session, WireEvent};
use crate::ServerError;

impl IntoResponse for ServerError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServerError::InvalidConfig(_)
            | ServerError::UnknownTarget(_)
            | ServerError::UnknownModel(_)
            | ServerError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServerError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServerError::NotYourTurn(_) | ServerError::SessionFinished => StatusCode::CONFLICT,
            ServerError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"error": self.code(), "message": self.to_string()});
        (status, Json(body)).into_response()
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServerError> {
    payload
        .map(|Json(value)| value)
        .map_err(|e| ServerError::BadRequest(e.body_text()))
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(show_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/world", get(get_world))
        .route("/sessions/{id}/stream", get(stream_events))
        .route("/targets", get(list_targets))
        .with_state(registry)
}

async fn create_session(
    State(registry): State<Arc<Registry>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<impl IntoResponse, ServerError> {
    let request = body(payload).map_err(|e| match e {
        ServerError::BadRequest(msg) => ServerError::InvalidConfig(msg),
        other => other,
    })?;
    let session = registry.create(request)?;
    Ok((StatusCode::CREATED, Json(session.summary())))
}

async fn list_sessions(State(registry): State<Arc<Registry>>) -> impl IntoResponse {
    Json(registry.list())
}

async fn show_session(
    State(registry): State<Arc<Registry>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ServerError> {
    Ok(Json(registry.get(&id)?.summary()))
}

async fn post_message(
    State(registry): State<Arc<Registry>>,
    Path(id): Path<String>,
    payload: Result<Json<PostMessage>, JsonRejection>,
) -> Result<impl IntoResponse, ServerError> {
    let session = registry.get(&id)?;
    let message = body(payload)?;
    session.post(message.role, &message.text)?;
    Ok((StatusCode::ACCEPTED, Json(json!({"accepted": true}))))
}

#[derive(Debug, Deserialize)]
struct WorldQuery {
    at: Option<u64>,
}

async fn get_world(
    State(registry): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(query): Query<WorldQuery>,
) -> Result<impl IntoResponse, ServerError> {
    Ok(Json(registry.get(&id)?.world(query.at)?))
}

async fn list_targets(State(registry): State<Arc<Registry>>) -> impl IntoResponse {
    Json(registry.targets().names().map(str::to_string).collect::<Vec<_>>())
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    from: Option<u64>,
}

async fn stream_events(
    State(registry): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(query): Query<StreamQuery>,
    upgrade: WebSocketUpgrade,
) -> Result<Response, ServerError> {
    let session = registry.get(&id)?;
    registry.attach(&session);
    let from = query.from.unwrap_or(0) as usize;
    Ok(upgrade.on_upgrade(move |socket| pump(socket, session, from)))
}

/// Sends every event from `cursor` on, then live events, then closes once
/// the session is over and the client has everything.
async fn pump(mut socket: WebSocket, session: Arc<Session>, mut cursor: usize) {
    let mut changes = session.subscribe();
    loop {
        changes.borrow_and_update();
        let (batch, status) = session.events_from(cursor);
        for event in batch {
            let wire = WireEvent {
                session_id: session.id().to_string(),
                event,
            };
            let text = serde_json::to_string(&wire).expect("events serialize");
            if socket.send(Message::Text(text.into())).await.is_err() {
                return;
            }
            cursor += 1;
        }
        if status.is_terminal() {
            let frame = CloseFrame {
                code: axum::extract::ws::close_code::NORMAL,
                reason: status.as_str().into(),
            };
            let _ = socket.send(Message::Close(Some(frame))).await;
            return;
        }
        tokio::select! {
            changed = changes.changed() => {
                if changed.is_err() {
                    return;
                }
            }
            incoming = socket.recv() => {
                match incoming {
                    None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                    Some(Ok(_)) => {}
                }
            }
        }
    }
}
