use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::mpsc::{unbounded_channel, UnboundedSender};
use tokio::time::{interval, MissedTickBehavior};

use crate::protocol::{parse_client, ClientMessage, ErrorCode, ProtocolError, ServerMessage};
use crate::session::{SessionError, SessionManager};

/// Websocket endpoint at `/ws`.
pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(manager)
}

pub async fn serve(listener: TcpListener, manager: Arc<SessionManager>) -> std::io::Result<()> {
    axum::serve(listener, router(manager)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(manager): State<Arc<SessionManager>>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, manager))
}

fn session_error(e: SessionError) -> ProtocolError {
    match e {
        SessionError::UnknownSession(_) | SessionError::Stopped(_) => ProtocolError::new(ErrorCode::UnknownSession, e.to_string()),
        SessionError::InvalidConfig(_) => ProtocolError::new(ErrorCode::InvalidConfig, e.to_string()),
        SessionError::Io(_) => ProtocolError::new(ErrorCode::InvalidMessage, e.to_string()),
    }
}

async fn connection(socket: WebSocket, manager: Arc<SessionManager>) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = unbounded_channel::<String>();
    let writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    let mut owned = Vec::new();
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => handle(&text, &manager, &tx, &mut owned),
            Message::Close(_) => break,
            _ => {}
        }
    }
    for id in owned {
        let _ = manager.stop(id);
    }
    drop(tx);
    let _ = writer.await;
}

fn handle(text: &str, manager: &Arc<SessionManager>, tx: &UnboundedSender<String>, owned: &mut Vec<u64>) {
    let send = |m: ServerMessage| {
        let _ = tx.send(m.encode());
    };
    let msg = match parse_client(text) {
        Ok(m) => m,
        Err(e) => return send(ServerMessage::error(e, None)),
    };
    match msg {
        ClientMessage::Start { config } => {
            let tick_dt = config.tick_dt;
            match manager.start(config) {
                Ok(id) => {
                    let session = manager.get(id).expect("session just started");
                    let (human_id, ego_id) = {
                        let s = session.lock().unwrap();
                        (s.human_id, s.ego_id)
                    };
                    owned.push(id);
                    send(ServerMessage::Started { session: id, human_id, ego_id, tick_dt });
                    tokio::spawn(run_loop(manager.clone(), id, tick_dt, tx.clone()));
                }
                Err(e) => send(ServerMessage::error(session_error(e), None)),
            }
        }
        ClientMessage::Control { session, input } => {
            if let Err(e) = manager.control(session, input) {
                send(ServerMessage::error(session_error(e), Some(session)));
            }
        }
        ClientMessage::Stop { session } => match manager.stop(session) {
            Ok((export, files)) => {
                owned.retain(|&id| id != session);
                send(ServerMessage::Stopped {
                    session,
                    ticks: export.ticks,
                    trajectory_csv: export.trajectory_csv,
                    profile: export.profile,
                    files: files.map(|f| f.iter().map(|p| p.display().to_string()).collect()),
                });
            }
            Err(e) => send(ServerMessage::error(session_error(e), Some(session))),
        },
    }
}

/// Ticks a session at its fixed step until it stops. Simulated time
/// advances by exactly one step per tick however late the timer fires.
async fn run_loop(manager: Arc<SessionManager>, id: u64, tick_dt: f64, tx: UnboundedSender<String>) {
    let mut timer = interval(Duration::from_secs_f64(tick_dt));
    timer.set_missed_tick_behavior(MissedTickBehavior::Delay);
    timer.tick().await;
    loop {
        timer.tick().await;
        let Ok(session) = manager.get(id) else { break };
        let update = tokio::task::block_in_place(|| session.lock().unwrap().tick());
        match update {
            Ok(u) => {
                if tx.send(ServerMessage::State(u).encode()).is_err() {
                    break;
                }
            }
            Err(_) => break,
        }
    }
}
