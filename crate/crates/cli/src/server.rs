//! Websocket session server.
//!
//! Every connection to `/session?projectId=..&userId=..&debug=..` owns one
//! [`Session`]. A single task per connection serializes client messages,
//! frame ticks and timeout checks, so a session never sees concurrent input.
//! The registry is the only state shared between connections.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use dashmap::DashMap;
use futures::SinkExt;
use hitl_core::config::ProjectCatalog;
use hitl_core::protocol::{decode_client_within, encode_server, ErrorCode, ProtocolError, ServerMessage};
use hitl_core::recorder::LocalDirSink;
use hitl_core::session::{reason, Session, SessionState, TrialStore};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio::time::Instant;

/// How long shutdown waits for open sessions to finalize their logs.
pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("data directory {path}: {source}")]
    DataDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

impl ServeError {
    pub fn class(&self) -> &'static str {
        match self {
            ServeError::DataDir { .. } => "data_dir",
            ServeError::Bind { .. } => "bind",
        }
    }
}

/// A live session as seen from outside its connection task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionInfo {
    pub project_id: String,
    pub user_id: String,
}

/// Concurrent map of open sessions, keyed by session id.
#[derive(Debug, Default)]
pub struct Registry {
    sessions: DashMap<String, SessionInfo>,
}

impl Registry {
    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.iter().map(|e| e.key().clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<SessionInfo> {
        self.sessions.get(id).map(|e| e.value().clone())
    }
}

#[derive(Clone)]
struct AppState {
    catalog: Arc<ProjectCatalog>,
    store: TrialStore,
    registry: Arc<Registry>,
    shutdown: watch::Receiver<bool>,
}

#[derive(Debug)]
struct SessionQuery {
    project_id: Option<String>,
    user_id: Option<String>,
    debug: Option<String>,
}

fn truthy(v: Option<&str>) -> bool {
    matches!(v, Some("1" | "true" | "yes" | "on" | ""))
}

/// A bound, running server.
pub struct Server {
    addr: SocketAddr,
    registry: Arc<Registry>,
    data_dir: PathBuf,
    shutdown: watch::Sender<bool>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl Server {
    /// Binds `addr` and starts serving `catalog`. Finished trials go to
    /// `data_dir/<projectId>/`; open ones are spooled under `data_dir/spool/`.
    pub async fn start(catalog: ProjectCatalog, addr: &str, data_dir: PathBuf) -> Result<Server, ServeError> {
        let dir_err = |source| ServeError::DataDir {
            path: data_dir.clone(),
            source,
        };
        std::fs::create_dir_all(&data_dir).map_err(dir_err)?;
        let probe = data_dir.join(".write-probe");
        std::fs::write(&probe, b"").map_err(dir_err)?;
        let _ = std::fs::remove_file(&probe);

        let listener = TcpListener::bind(addr).await.map_err(|source| ServeError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        let local = listener.local_addr().map_err(|source| ServeError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        let (tx, rx) = watch::channel(false);
        let registry = Arc::new(Registry::default());
        let state = AppState {
            catalog: Arc::new(catalog),
            store: TrialStore {
                spool_dir: data_dir.join("spool"),
                sink: Arc::new(LocalDirSink::new(data_dir.clone())),
            },
            registry: registry.clone(),
            shutdown: rx.clone(),
        };
        let app = Router::new().route("/session", get(upgrade)).with_state(state);
        let mut stop = rx;
        let handle = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stop.wait_for(|s| *s).await;
                })
                .await
        });
        Ok(Server {
            addr: local,
            registry,
            data_dir,
            shutdown: tx,
            handle,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// `ws://` base URL of the session endpoint.
    pub fn session_url(&self) -> String {
        format!("ws://{}/session", self.addr)
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn data_dir(&self) -> &std::path::Path {
        &self.data_dir
    }

    /// Ends every open session with reason `server_shutdown`, waits for their
    /// logs to be finalized and stops accepting connections. Returns the
    /// number of sessions that were open.
    pub async fn shutdown(self) -> usize {
        let open = self.registry.len();
        let _ = self.shutdown.send(true);
        let deadline = Instant::now() + SHUTDOWN_GRACE;
        while !self.registry.is_empty() && Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        let _ = tokio::time::timeout(SHUTDOWN_GRACE, self.handle).await;
        open
    }
}

async fn upgrade(ws: WebSocketUpgrade, Query(q): Query<BTreeMap<String, String>>, State(app): State<AppState>) -> Response {
    let query = SessionQuery {
        project_id: q.get("projectId").cloned(),
        user_id: q.get("userId").cloned(),
        debug: q.get("debug").cloned(),
    };
    ws.on_upgrade(move |socket| run_connection(socket, query, app))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(encode_server(msg).into())).await.is_ok()
}

async fn reject(mut socket: WebSocket, err: ProtocolError) {
    let _ = send(&mut socket, &err.to_message()).await;
    let _ = socket.send(Message::Close(None)).await;
}

async fn run_connection(mut socket: WebSocket, query: SessionQuery, app: AppState) {
    let (Some(project_id), Some(user_id)) = (query.project_id, query.user_id) else {
        return reject(
            socket,
            ProtocolError::new(ErrorCode::InvalidValue, "projectId and userId query parameters are required"),
        )
        .await;
    };
    let now = Instant::now().into_std();
    let mut session = match Session::create(&app.catalog, &project_id, &user_id, app.store.clone(), now) {
        Ok(s) => s,
        Err(e) => return reject(socket, ProtocolError::new(e.code(), e.to_string())).await,
    };
    session.set_debug(truthy(query.debug.as_deref()));
    let id = session.id().to_string();
    app.registry.sessions.insert(
        id.clone(),
        SessionInfo {
            project_id: project_id.clone(),
            user_id: user_id.clone(),
        },
    );
    tracing::info!(session = %id, project = %project_id, user = %user_id, "session created");
    let mut shutdown = app.shutdown.clone();
    let bounds = session.frame_bounds();
    let mut connected = true;
    let mut peer_closed = false;

    loop {
        let wake = match session.next_tick_at() {
            Some(t) => t.min(session.timeout_deadline()),
            None => session.timeout_deadline(),
        };
        let mut out: Vec<ServerMessage> = Vec::new();
        tokio::select! {
            biased;
            _ = shutdown.wait_for(|s| *s) => {
                out.extend(session.terminate(reason::SERVER_SHUTDOWN, Instant::now().into_std()));
            }
            incoming = socket.recv() => {
                let now = Instant::now().into_std();
                match incoming {
                    Some(Ok(Message::Text(text))) => match decode_client_within(text.as_str(), Some(bounds)) {
                        Ok(msg) => out = session.handle_client_message(msg, now),
                        Err(e) => {
                            session.note_rejected(now);
                            out.push(e.to_message());
                        }
                    },
                    Some(Ok(Message::Binary(_))) => {
                        session.note_rejected(now);
                        out.push(ProtocolError::binary_frame().to_message());
                    }
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => {}
                    Some(Ok(Message::Close(_))) => {
                        peer_closed = true;
                        connected = false;
                        out.extend(session.terminate(reason::CLIENT_DISCONNECT, now));
                    }
                    Some(Err(_)) | None => {
                        connected = false;
                        out.extend(session.terminate(reason::CLIENT_DISCONNECT, now));
                    }
                }
            }
            _ = tokio::time::sleep_until(Instant::from_std(wake)) => {
                let now = Instant::now().into_std();
                while let Some(frame) = session.tick(now) {
                    out.push(frame);
                }
                out.extend(session.check_timeout(now));
            }
        }
        if connected {
            for msg in &out {
                if !send(&mut socket, msg).await {
                    connected = false;
                    break;
                }
            }
        }
        if !connected && session.state() != SessionState::Ended {
            session.terminate(reason::CLIENT_DISCONNECT, Instant::now().into_std());
        }
        if session.state() == SessionState::Ended {
            break;
        }
    }
    if peer_closed {
        // the close reply is queued on receipt; flushing sends it
        let _ = socket.flush().await;
    } else if connected {
        let _ = socket.send(Message::Close(None)).await;
    }
    tracing::info!(
        session = %id,
        reason = session.end_reason().unwrap_or(""),
        stored = ?session.stored_trial().map(|t| t.log_path().to_path_buf()),
        "session ended"
    );
    drop(session);
    app.registry.sessions.remove(&id);
}
