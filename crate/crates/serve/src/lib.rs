//! Live decode service: one WebSocket channel per session at `/ws`, carrying
//! the JSON messages in [`protocol`].

pub mod protocol;
pub mod session;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;

pub use protocol::{ClientMessage, ErrorCode, ServerMessage};
pub use session::{Handler, Reply, ServeState, Session};

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(state)
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<ServeState>>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

async fn run_session(socket: WebSocket, state: Arc<ServeState>) {
    let (mut tx, mut rx) = socket.split();
    let mut handler = Handler::new(state);
    while let Some(Ok(frame)) = rx.next().await {
        let text = match frame {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            Message::Close(_) => break,
            _ => continue,
        };
        // Decoding is short and CPU-bound; the frozen model is shared read-only.
        let reply = tokio::task::block_in_place(|| handler.handle(&text));
        let json = serde_json::to_string(&reply.message).expect("replies serialize");
        if tx.send(Message::Text(json.into())).await.is_err() {
            break;
        }
        if reply.close {
            let _ = tx.send(Message::Close(None)).await;
            break;
        }
    }
}

/// Binds `addr` and serves until the task is dropped.
pub async fn serve(addr: SocketAddr, state: Arc<ServeState>) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving /ws");
    serve_on(listener, state).await
}

pub async fn serve_on(listener: TcpListener, state: Arc<ServeState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
