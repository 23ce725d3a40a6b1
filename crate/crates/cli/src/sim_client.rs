//! Headless simulated participant.
//!
//! Talks to a server over the public websocket protocol only. In
//! `human_control` projects it demonstrates the teacher's action for every
//! frame; in `agent_control_feedback` projects it judges every executed action
//! against the teacher and sends good/bad feedback.

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use hitl_core::agents::Feedback;
use hitl_core::env::{ActionLabel, EnvId};
use hitl_core::protocol::{
    decode_server, encode_client, ClientMessage, ControlVerb, ErrorCode, FrameMessage, ServerMessage, UiConfig,
};
use hitl_core::teacher::{TeacherKind, TeacherPolicy};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

/// A session is abandoned after this many protocol errors.
pub const MAX_PROTOCOL_ERRORS: u64 = 10;
/// Longest wait for any server message before giving up.
pub const RECV_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum SimError {
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("connection lost: {0}")]
    Transport(String),
    #[error("no message from the server within {0:?}")]
    Timeout(Duration),
    #[error("session aborted after {0} protocol errors")]
    TooManyErrors(u64),
    #[error("unexpected server behaviour: {0}")]
    Unexpected(String),
}

impl SimError {
    pub fn class(&self) -> &'static str {
        match self {
            SimError::Connect(_) => "connection_refused",
            SimError::Transport(_) | SimError::Timeout(_) => "connection_lost",
            SimError::TooManyErrors(_) | SimError::Unexpected(_) => "protocol",
        }
    }
}

/// What a simulated participant observed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionReport {
    /// Completed episodes.
    pub episodes: u64,
    pub steps_per_episode: Vec<u32>,
    pub returns: Vec<f64>,
    pub feedback_given: u64,
    /// Error replies other than `budget_exhausted`, plus undecodable messages.
    pub protocol_errors: u64,
    pub budget_exhausted: u64,
    pub frames: u64,
    pub session_end_reason: Option<String>,
}

/// Where and as whom to connect.
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Session endpoint, e.g. `ws://127.0.0.1:5000/session`.
    pub url: String,
    pub project_id: String,
    pub user_id: String,
    pub teacher: TeacherKind,
    pub seed: u64,
    /// Stop after this many completed episodes.
    pub episodes: u64,
    /// Stop after this many frames, whichever comes first.
    pub max_frames: Option<u64>,
    /// Keep sending feedback after the budget is reported exhausted.
    pub ignore_budget: bool,
    pub debug: bool,
}

impl SimOptions {
    pub fn new(url: impl Into<String>, project_id: impl Into<String>, teacher: TeacherKind, episodes: u64) -> Self {
        SimOptions {
            url: url.into(),
            project_id: project_id.into(),
            user_id: "sim".into(),
            teacher,
            seed: 0,
            episodes,
            max_frames: None,
            ignore_budget: false,
            debug: false,
        }
    }
}

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// Thin typed wrapper over one websocket connection.
pub struct WireClient {
    socket: Socket,
}

impl WireClient {
    pub async fn connect(url: &str, project_id: &str, user_id: &str, debug: bool) -> Result<Self, SimError> {
        let sep = if url.contains('?') { '&' } else { '?' };
        let full = format!(
            "{url}{sep}projectId={}&userId={}{}",
            encode_query(project_id),
            encode_query(user_id),
            if debug { "&debug=true" } else { "" }
        );
        let (socket, _) = connect_async(full).await.map_err(|e| SimError::Connect(e.to_string()))?;
        Ok(WireClient { socket })
    }

    pub async fn send(&mut self, msg: &ClientMessage) -> Result<(), SimError> {
        self.send_text(encode_client(msg)).await
    }

    pub async fn send_text(&mut self, text: String) -> Result<(), SimError> {
        self.socket
            .send(Message::Text(text.into()))
            .await
            .map_err(|e| SimError::Transport(e.to_string()))
    }

    pub async fn send_binary(&mut self, data: Vec<u8>) -> Result<(), SimError> {
        self.socket
            .send(Message::Binary(data.into()))
            .await
            .map_err(|e| SimError::Transport(e.to_string()))
    }

    /// Next server message. `Ok(None)` once the server closes the socket;
    /// `Ok(Some(Err(text)))` for a text message that does not decode.
    pub async fn recv_within(&mut self, limit: Duration) -> Result<Option<Result<ServerMessage, String>>, SimError> {
        loop {
            let next = tokio::time::timeout(limit, self.socket.next())
                .await
                .map_err(|_| SimError::Timeout(limit))?;
            match next {
                None | Some(Ok(Message::Close(_))) => return Ok(None),
                Some(Err(e)) => return Err(SimError::Transport(e.to_string())),
                Some(Ok(Message::Text(t))) => return Ok(Some(decode_server(t.as_str()).map_err(|_| t.to_string()))),
                Some(Ok(_)) => continue,
            }
        }
    }

    pub async fn recv(&mut self) -> Result<Option<Result<ServerMessage, String>>, SimError> {
        self.recv_within(RECV_TIMEOUT).await
    }

    pub async fn close(mut self) {
        let _ = self.socket.close(None).await;
        // drain until the server acknowledges
        while let Ok(Some(Ok(_))) = tokio::time::timeout(Duration::from_secs(2), self.socket.next()).await {}
    }
}

fn encode_query(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Demonstrate,
    Critique,
}

struct Run {
    opts: SimOptions,
    teacher: TeacherPolicy,
    env: EnvId,
    report: SessionReport,
    current_episode: u64,
    last_step: u32,
    last_score: f64,
    previous_obs: Option<Vec<f64>>,
    budget_left: Option<u64>,
}

impl Run {
    fn error(&mut self, code: Option<ErrorCode>) -> Result<(), SimError> {
        if code == Some(ErrorCode::BudgetExhausted) {
            self.report.budget_exhausted += 1;
            self.budget_left = Some(0);
            return Ok(());
        }
        self.report.protocol_errors += 1;
        if self.report.protocol_errors >= MAX_PROTOCOL_ERRORS {
            return Err(SimError::TooManyErrors(self.report.protocol_errors));
        }
        Ok(())
    }

    /// Books episode boundaries. Returns true once enough episodes are done.
    fn track(&mut self, f: &FrameMessage) -> bool {
        self.report.frames += 1;
        if f.episode != self.current_episode {
            if self.current_episode != 0 && self.last_step > 0 {
                self.report.episodes += 1;
                self.report.steps_per_episode.push(self.last_step);
                self.report.returns.push(self.last_score);
            }
            self.current_episode = f.episode;
            self.previous_obs = None;
        }
        self.last_step = f.step;
        self.last_score = f.score;
        self.report.episodes >= self.opts.episodes || self.opts.max_frames.is_some_and(|m| self.report.frames >= m)
    }

    fn respond(&mut self, role: Role, f: &FrameMessage) -> Option<ClientMessage> {
        let reply = match role {
            Role::Demonstrate => {
                let action = match (&f.obs, self.teacher.kind()) {
                    (Some(obs), _) => self.teacher.choose(self.env, obs),
                    (None, TeacherKind::Random) => self.teacher.choose(self.env, &[]),
                    (None, _) => ActionLabel::Noop,
                };
                Some(ClientMessage::Command {
                    action,
                    frame_id: f.frame_id,
                })
            }
            Role::Critique => {
                let exhausted = self.budget_left == Some(0) && !self.opts.ignore_budget;
                match (&self.previous_obs, f.action) {
                    (Some(prev), Some(executed)) if !exhausted => {
                        let wanted = self.teacher.choose(self.env, prev);
                        self.report.feedback_given += 1;
                        if let Some(left) = self.budget_left.as_mut() {
                            *left = left.saturating_sub(1);
                        }
                        Some(ClientMessage::Feedback {
                            value: if executed == wanted { Feedback::Good } else { Feedback::Bad },
                            frame_id: f.frame_id,
                        })
                    }
                    _ => None,
                }
            }
        };
        self.previous_obs = f.obs.clone();
        reply
    }
}

fn env_for_buttons(cfg: &UiConfig, teacher: TeacherKind) -> EnvId {
    match teacher {
        TeacherKind::McOracle => EnvId::MountainCar,
        TeacherKind::GridOracle => EnvId::GridWorld,
        TeacherKind::Random => {
            if cfg.buttons.iter().any(|b| b == "up" || b == "down") {
                EnvId::GridWorld
            } else {
                EnvId::MountainCar
            }
        }
    }
}

async fn run(opts: SimOptions, expect: Option<Role>) -> Result<SessionReport, SimError> {
    let mut client = WireClient::connect(&opts.url, &opts.project_id, &opts.user_id, opts.debug).await?;
    client
        .send(&ClientMessage::Connect {
            project_id: opts.project_id.clone(),
            user_id: opts.user_id.clone(),
        })
        .await?;
    let mut run = Run {
        teacher: TeacherPolicy::new(opts.teacher, opts.seed),
        env: EnvId::MountainCar,
        opts,
        report: SessionReport::default(),
        current_episode: 0,
        last_step: 0,
        last_score: 0.0,
        previous_obs: None,
        budget_left: None,
    };
    let role = loop {
        match client.recv().await? {
            None => return Err(SimError::Unexpected("closed before uiConfig".into())),
            Some(Ok(ServerMessage::UiConfig(cfg))) => {
                run.env = env_for_buttons(&cfg, run.opts.teacher);
                if cfg.show_budget {
                    run.budget_left = Some(cfg.budget_max);
                }
                let role = if cfg.mode == "human_control" {
                    Role::Demonstrate
                } else {
                    Role::Critique
                };
                break role;
            }
            Some(Ok(ServerMessage::Error { code, .. })) => run.error(Some(code))?,
            Some(Ok(other)) => return Err(SimError::Unexpected(format!("expected uiConfig, got {other:?}"))),
            Some(Err(_)) => run.error(None)?,
        }
    };
    if let Some(want) = expect {
        if want != role {
            return Err(SimError::Unexpected(format!("project mode does not suit a {want:?} session")));
        }
    }
    client.send(&ClientMessage::Control { verb: ControlVerb::Start }).await?;
    let mut stopping = false;
    loop {
        match client.recv().await? {
            None => break,
            Some(Ok(ServerMessage::Frame(f))) if !stopping => {
                if run.track(&f) {
                    stopping = true;
                    client.send(&ClientMessage::Control { verb: ControlVerb::Stop }).await?;
                    continue;
                }
                if let Some(reply) = run.respond(role, &f) {
                    if let Err(e) = client.send(&reply).await {
                        // the server may have ended the session; look for its reason
                        return match drain_for_end(&mut client).await {
                            Some(reason) => {
                                run.report.session_end_reason = Some(reason);
                                Ok(run.report)
                            }
                            None => Err(e),
                        };
                    }
                }
            }
            Some(Ok(ServerMessage::Frame(_))) => {}
            Some(Ok(ServerMessage::BudgetUpdate { used, max })) => run.budget_left = Some(max.saturating_sub(used)),
            Some(Ok(ServerMessage::SessionEnd { reason, .. })) => {
                run.report.session_end_reason = Some(reason);
                break;
            }
            Some(Ok(ServerMessage::Error { code, .. })) => run.error(Some(code))?,
            Some(Ok(ServerMessage::UiConfig(_) | ServerMessage::Info { .. })) => {}
            Some(Err(_)) => run.error(None)?,
        }
    }
    client.close().await;
    Ok(run.report)
}

async fn drain_for_end(client: &mut WireClient) -> Option<String> {
    while let Ok(Some(msg)) = client.recv_within(Duration::from_secs(1)).await {
        if let Ok(ServerMessage::SessionEnd { reason, .. }) = msg {
            return Some(reason);
        }
    }
    None
}

/// Demonstrates the teacher's policy for `episodes` episodes in a
/// `human_control` project.
pub async fn run_demo_session(opts: SimOptions) -> Result<SessionReport, SimError> {
    run(opts, Some(Role::Demonstrate)).await
}

/// Critiques the agent with oracle feedback for `episodes` episodes in an
/// `agent_control_feedback` project.
pub async fn run_feedback_session(opts: SimOptions) -> Result<SessionReport, SimError> {
    run(opts, Some(Role::Critique)).await
}

/// Picks demonstration or feedback from the project's advertised mode.
pub async fn run_session(opts: SimOptions) -> Result<SessionReport, SimError> {
    run(opts, None).await
}
