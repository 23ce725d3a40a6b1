//! Per-participant session state machine.
//!
//! A [`Session`] owns one environment, at most one learner, and the trial log.
//! It is driven by two inputs, client messages and clock ticks. Both take the
//! current [`Instant`] explicitly, so the whole machine runs the same way under
//! a real event loop and in a test that fakes time.
//!
//! Legal state transitions:
//!
//! ```text
//! Created -> Connected -> Pregame -> Running <-> Paused
//!            Connected ------------> Running          (no pre-game pages)
//! {Connected, Pregame, Running, Paused} -> Ended
//! Created -> Ended                                    (forced: timeout, shutdown, disconnect)
//! ```

mod offline;

use std::collections::VecDeque;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentKind, AgentParams, Feedback};
use crate::config::{ProjectCatalog, GAME_PAGE};
use crate::env::{ActionLabel, EnvConfig, Environment, Observation};
use crate::protocol::{
    encode_png_base64, ClientMessage, ControlVerb, ErrorCode, FrameMessage, ServerMessage, UiConfig,
    PROTOCOL_VERSION,
};
use crate::recorder::{
    load_trial, ActionSource, Event, EventPayload, FrameRecord, StorageSink, StoredTrial, TransitionRecord,
    TrialCounters, TrialHeader, TrialLog, TrialMetadata, LOG_VERSION,
};

pub use offline::{train_offline, OfflineError};

/// Feedback can be attributed to any of the most recent frames in this window.
pub const ATTRIBUTION_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// The participant drives the environment; commands are demonstrations.
    HumanControl,
    /// The agent drives; the participant critiques with good/bad feedback.
    AgentControlFeedback,
}

impl InteractionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InteractionMode::HumanControl => "human_control",
            InteractionMode::AgentControlFeedback => "agent_control_feedback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRateConfig {
    pub min: f64,
    pub max: f64,
    pub default: f64,
    /// Factor applied per speed-up or speed-down.
    pub multiplier: f64,
}

impl Default for FrameRateConfig {
    fn default() -> Self {
        FrameRateConfig {
            min: 1.0,
            max: 60.0,
            default: 10.0,
            multiplier: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectConfig {
    pub project_id: String,
    pub env_config: EnvConfig,
    pub agent_kind: Option<AgentKind>,
    pub agent_params: AgentParams,
    pub mode: InteractionMode,
    pub ui_buttons: Vec<String>,
    pub budget_max: Option<u64>,
    pub frame_rate: FrameRateConfig,
    pub max_session: Duration,
    pub idle_timeout: Duration,
    pub pages: Vec<String>,
    /// Adds the raw observation and executed action to frame messages.
    pub expose_observation: bool,
    pub redirect: Option<String>,
}

impl ProjectConfig {
    /// A minimal project; mostly useful in tests.
    pub fn new(project_id: impl Into<String>, env_config: EnvConfig) -> Self {
        ProjectConfig {
            project_id: project_id.into(),
            env_config,
            agent_kind: None,
            agent_params: AgentParams::default(),
            mode: InteractionMode::HumanControl,
            ui_buttons: Vec::new(),
            budget_max: None,
            frame_rate: FrameRateConfig::default(),
            max_session: Duration::from_secs(3600),
            idle_timeout: Duration::from_secs(300),
            pages: Vec::new(),
            expose_observation: false,
            redirect: None,
        }
    }

    /// Pages shown before the game page.
    pub fn pregame_pages(&self) -> &[String] {
        let end = self.pages.iter().position(|p| p == GAME_PAGE).unwrap_or(0);
        &self.pages[..end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    Connected,
    Pregame,
    Running,
    Paused,
    Ended,
}

impl SessionState {
    pub fn can_transition_to(self, to: SessionState) -> bool {
        use SessionState::*;
        self == to
            || matches!(
                (self, to),
                (Created, Connected)
                    | (Connected, Pregame)
                    | (Connected, Running)
                    | (Pregame, Running)
                    | (Running, Paused)
                    | (Paused, Running)
                    | (Created | Connected | Pregame | Running | Paused, Ended)
            )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SessionState::Created => "created",
            SessionState::Connected => "connected",
            SessionState::Pregame => "pregame",
            SessionState::Running => "running",
            SessionState::Paused => "paused",
            SessionState::Ended => "ended",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown_project: no project named {0:?}")]
    UnknownProject(String),
    #[error("cannot open trial log: {0}")]
    Log(#[from] std::io::Error),
}

impl SessionError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SessionError::UnknownProject(_) => ErrorCode::UnknownProject,
            SessionError::Log(_) => ErrorCode::IllegalTransition,
        }
    }
}

/// Where trial logs are spooled while open and stored once finished.
#[derive(Clone)]
pub struct TrialStore {
    pub spool_dir: PathBuf,
    pub sink: Arc<dyn StorageSink>,
}

impl fmt::Debug for TrialStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrialStore").field("spool_dir", &self.spool_dir).finish_non_exhaustive()
    }
}

/// Why a session ended.
pub mod reason {
    pub const STOP: &str = "stop";
    pub const TIMEOUT: &str = "timeout";
    pub const CLIENT_DISCONNECT: &str = "client_disconnect";
    pub const SERVER_SHUTDOWN: &str = "server_shutdown";
}

/// 64-bit FNV-1a, used to derive a per-user environment seed.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Environment seed for a participant: the project seed mixed with a stable
/// hash of the user id.
pub fn session_seed(project_seed: u64, user_id: &str) -> u64 {
    project_seed ^ fnv1a(user_id)
}

#[derive(Debug, Clone)]
struct Attribution {
    frame_id: u64,
    transition: Option<(Observation, usize)>,
}

#[derive(Debug)]
pub struct Session {
    id: String,
    user_id: String,
    project: Arc<ProjectConfig>,
    state: SessionState,
    history: Vec<SessionState>,
    env: Environment,
    agent: Option<Agent>,
    agent_rng: ChaCha8Rng,
    seed: u64,
    debug: bool,
    budget_used: u64,
    feedback_updates: u64,
    last_frame_id: u64,
    frame_rate_hz: f64,
    next_tick: Option<Instant>,
    last_tick: Option<Instant>,
    last_mono_ms: u64,
    created_at: Instant,
    created_wall_ms: u64,
    last_activity: Instant,
    pending_command: Option<usize>,
    recent: VecDeque<Attribution>,
    online_learning: bool,
    episode_return: f64,
    page: String,
    counters: TrialCounters,
    log: Option<TrialLog>,
    store: TrialStore,
    stored: Option<StoredTrial>,
    end_reason: Option<String>,
}

impl Session {
    /// Looks the project up and opens a fresh session for `user_id`.
    pub fn create(
        catalog: &ProjectCatalog,
        project_id: &str,
        user_id: &str,
        store: TrialStore,
        now: Instant,
    ) -> Result<Session, SessionError> {
        let project = catalog
            .get(project_id)
            .ok_or_else(|| SessionError::UnknownProject(project_id.to_string()))?;
        Session::new(project, user_id, store, now)
    }

    pub fn new(
        project: Arc<ProjectConfig>,
        user_id: &str,
        store: TrialStore,
        now: Instant,
    ) -> Result<Session, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let seed = session_seed(project.env_config.seed, user_id);
        let env_cfg = EnvConfig {
            seed,
            ..project.env_config.clone()
        };
        let env = Environment::new(env_cfg).map_err(|e| SessionError::Log(std::io::Error::other(e.to_string())))?;
        let agent = project
            .agent_kind
            .map(|k| Agent::new(k, project.env_config.env_id, &project.agent_params));
        let log = TrialLog::create(
            &store.spool_dir,
            TrialHeader {
                version: LOG_VERSION,
                session_id: id.clone(),
                project_id: project.project_id.clone(),
                user_id: user_id.to_string(),
            },
        )?;
        let created_wall_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let page = project
            .pregame_pages()
            .first()
            .cloned()
            .unwrap_or_else(|| GAME_PAGE.to_string());
        let mut session = Session {
            id,
            user_id: user_id.to_string(),
            frame_rate_hz: project.frame_rate.default,
            counters: TrialCounters {
                budget_max: project.budget_max,
                ..TrialCounters::default()
            },
            project,
            state: SessionState::Created,
            history: vec![SessionState::Created],
            env,
            agent,
            agent_rng: ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0x5eed),
            seed,
            debug: false,
            budget_used: 0,
            feedback_updates: 0,
            last_frame_id: 0,
            next_tick: None,
            last_tick: None,
            last_mono_ms: 0,
            created_at: now,
            created_wall_ms,
            last_activity: now,
            pending_command: None,
            recent: VecDeque::with_capacity(ATTRIBUTION_WINDOW),
            online_learning: true,
            episode_return: 0.0,
            page,
            log: Some(log),
            store,
            stored: None,
            end_reason: None,
        };
        let start = EventPayload::SessionStart {
            project_id: session.project.project_id.clone(),
            user_id: session.user_id.clone(),
            env_id: session.project.env_config.env_id,
            seed,
            mode: session.project.mode.as_str().to_string(),
            agent_kind: session.project.agent_kind.map(|k| k.to_string()),
            debug: false,
        };
        session.record(now, start);
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn project(&self) -> &ProjectConfig {
        &self.project
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// Every state the session has been in, in order.
    pub fn history(&self) -> &[SessionState] {
        &self.history
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn budget_used(&self) -> u64 {
        self.budget_used
    }

    /// Number of agent updates driven by feedback.
    pub fn feedback_updates(&self) -> u64 {
        self.feedback_updates
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn agent(&self) -> Option<&Agent> {
        self.agent.as_ref()
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn counters(&self) -> &TrialCounters {
        &self.counters
    }

    pub fn online_learning(&self) -> bool {
        self.online_learning
    }

    pub fn last_activity(&self) -> Instant {
        self.last_activity
    }

    pub fn stored_trial(&self) -> Option<&StoredTrial> {
        self.stored.as_ref()
    }

    pub fn end_reason(&self) -> Option<&str> {
        self.end_reason.as_deref()
    }

    pub fn frame_bounds(&self) -> (u32, u32) {
        let c = self.env.config();
        (c.render_width, c.render_height)
    }

    pub fn set_debug(&mut self, debug: bool) {
        self.debug = debug;
    }

    /// When the next frame is due, if the session is running.
    pub fn next_tick_at(&self) -> Option<Instant> {
        match self.state {
            SessionState::Running => self.next_tick,
            _ => None,
        }
    }

    /// Earliest instant at which a timeout could fire.
    pub fn timeout_deadline(&self) -> Instant {
        (self.last_activity + self.project.idle_timeout).min(self.created_at + self.project.max_session)
    }

    fn frame_period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.frame_rate_hz)
    }

    /// Wall and monotonic milliseconds for an event at `now`, never earlier
    /// than the previous event.
    fn stamp(&mut self, now: Instant) -> (u64, u64) {
        let mono = (now.saturating_duration_since(self.created_at).as_millis() as u64).max(self.last_mono_ms);
        self.last_mono_ms = mono;
        (self.created_wall_ms + mono, mono)
    }

    fn record(&mut self, now: Instant, payload: EventPayload) {
        let (timestamp_ms, mono_ms) = self.stamp(now);
        let event = Event {
            timestamp_ms,
            mono_ms,
            session_id: self.id.clone(),
            payload,
        };
        match self.log.as_mut().map(|log| log.record(&event)) {
            Some(Ok(())) => self.counters.events += 1,
            _ => self.counters.dropped_events += 1,
        }
    }

    fn ui_config(&self) -> ServerMessage {
        ServerMessage::UiConfig(UiConfig {
            v: PROTOCOL_VERSION,
            buttons: self.project.ui_buttons.clone(),
            show_budget: self.project.budget_max.is_some(),
            budget_max: self.project.budget_max.unwrap_or(0),
            frame_rate_hz: self.frame_rate_hz,
            mode: self.project.mode.as_str().to_string(),
            page: self.page.clone(),
        })
    }

    fn emit_ui_config(&mut self, now: Instant) -> ServerMessage {
        let msg = self.ui_config();
        if let ServerMessage::UiConfig(cfg) = &msg {
            self.record(now, EventPayload::UiConfig(cfg.clone()));
        }
        msg
    }

    fn illegal(&self, what: &str) -> ServerMessage {
        ServerMessage::error(
            ErrorCode::IllegalTransition,
            format!("{what} is not allowed while {}", self.state),
        )
    }

    fn transition(&mut self, to: SessionState) {
        debug_assert!(self.state.can_transition_to(to), "{} -> {to}", self.state);
        if self.state != to {
            self.history.push(to);
        }
        self.state = to;
    }

    /// Applies one client message and returns the replies, in order.
    pub fn handle_client_message(&mut self, msg: ClientMessage, now: Instant) -> Vec<ServerMessage> {
        if self.state == SessionState::Ended {
            return vec![self.illegal(msg.type_name())];
        }
        self.last_activity = now;
        match msg {
            ClientMessage::Connect { project_id, user_id } => self.on_connect(&project_id, &user_id, now),
            ClientMessage::Control { verb } => self.on_control(verb, now),
            ClientMessage::Command { action, frame_id } => self.on_command(action, frame_id, now),
            ClientMessage::Feedback { value, frame_id } => self.on_feedback(value, frame_id, now),
            ClientMessage::Click { x, y, frame_id } => {
                if self.state == SessionState::Created {
                    return vec![self.illegal("click")];
                }
                let (w, h) = self.frame_bounds();
                if x >= w || y >= h {
                    return vec![ServerMessage::error(
                        ErrorCode::InvalidValue,
                        format!("click ({x}, {y}) outside the {w}x{h} frame"),
                    )];
                }
                self.counters.clicks += 1;
                self.record(now, EventPayload::Click { x, y, frame_id });
                vec![]
            }
            ClientMessage::Info { text } => {
                if self.state == SessionState::Created {
                    return vec![self.illegal("info")];
                }
                self.record(now, EventPayload::Info { text });
                vec![]
            }
            ClientMessage::Disconnect {} => self.end(reason::CLIENT_DISCONNECT, now).into_iter().collect(),
        }
    }

    /// Records a rejected wire message. Rejections still count as activity.
    pub fn note_rejected(&mut self, now: Instant) {
        if self.state != SessionState::Ended {
            self.last_activity = now;
        }
    }

    fn on_connect(&mut self, project_id: &str, user_id: &str, now: Instant) -> Vec<ServerMessage> {
        if self.state != SessionState::Created {
            return vec![self.illegal("connect")];
        }
        if project_id != self.project.project_id {
            return vec![ServerMessage::error(
                ErrorCode::UnknownProject,
                format!("this session serves project {:?}, not {project_id:?}", self.project.project_id),
            )];
        }
        if user_id != self.user_id {
            return vec![ServerMessage::error(
                ErrorCode::InvalidValue,
                format!("this session belongs to user {:?}", self.user_id),
            )];
        }
        self.transition(SessionState::Connected);
        if !self.project.pregame_pages().is_empty() {
            self.transition(SessionState::Pregame);
        }
        let mut out = vec![self.emit_ui_config(now)];
        if let Some(max) = self.project.budget_max {
            out.push(ServerMessage::BudgetUpdate {
                used: self.budget_used,
                max,
            });
        }
        out
    }

    fn on_control(&mut self, verb: ControlVerb, now: Instant) -> Vec<ServerMessage> {
        use SessionState::*;
        if self.state == Created {
            return vec![self.illegal(verb.as_str())];
        }
        let mut detail = None;
        let out = match verb {
            ControlVerb::Start => match self.state {
                Connected | Pregame => {
                    self.transition(Running);
                    self.page = GAME_PAGE.to_string();
                    let ui = self.emit_ui_config(now);
                    self.env.reset(None);
                    self.episode_return = 0.0;
                    self.next_tick = Some(now + self.frame_period());
                    self.last_tick = Some(now);
                    let frame = self.emit_frame(None, now);
                    vec![ui, frame]
                }
                Paused => {
                    self.transition(Running);
                    self.next_tick = Some(now + self.frame_period());
                    self.last_tick = Some(now);
                    vec![]
                }
                _ => return vec![self.illegal("start")],
            },
            ControlVerb::Pause => {
                if self.state != Running {
                    return vec![self.illegal("pause")];
                }
                self.transition(Paused);
                vec![]
            }
            ControlVerb::Stop => {
                self.record(now, EventPayload::Control { verb, detail: None });
                return self.end(reason::STOP, now).into_iter().collect();
            }
            ControlVerb::Reset => {
                if !matches!(self.state, Running | Paused) {
                    return vec![self.illegal("reset")];
                }
                let episode = self.env.episode();
                let steps = self.env.step_index();
                self.record(
                    now,
                    EventPayload::EpisodeEnd {
                        episode,
                        steps,
                        total_return: self.episode_return,
                        reason: "reset".into(),
                    },
                );
                self.counters.episodes += 1;
                self.start_next_episode();
                vec![self.emit_frame(None, now)]
            }
            ControlVerb::SpeedUp | ControlVerb::SpeedDown => {
                let fr = self.project.frame_rate;
                let target = if verb == ControlVerb::SpeedUp {
                    self.frame_rate_hz * fr.multiplier
                } else {
                    self.frame_rate_hz / fr.multiplier
                };
                self.frame_rate_hz = target.clamp(fr.min, fr.max);
                if self.next_tick.is_some() {
                    let next = self.last_tick.unwrap_or(now) + self.frame_period();
                    self.next_tick = Some(next.max(now));
                }
                detail = Some(format!("{}", self.frame_rate_hz));
                vec![self.emit_ui_config(now)]
            }
            ControlVerb::TrainOnline => {
                self.online_learning = !self.online_learning;
                let state = if self.online_learning { "on" } else { "off" };
                detail = Some(state.to_string());
                vec![ServerMessage::Info {
                    text: format!("online training {state}"),
                }]
            }
            ControlVerb::TrainOffline => {
                let (msg, d) = self.train_offline_now();
                detail = Some(d);
                vec![msg]
            }
        };
        self.record(now, EventPayload::Control { verb, detail });
        out
    }

    fn train_offline_now(&mut self) -> (ServerMessage, String) {
        let loaded = match self.log.as_mut().map(|l| l.flush().map(|_| l.path().to_path_buf())) {
            Some(Ok(path)) => load_trial(&path).map_err(|e| e.to_string()),
            Some(Err(e)) => Err(e.to_string()),
            None => Err("log closed".to_string()),
        };
        let trial = match loaded {
            Ok(t) => t,
            Err(e) => return (ServerMessage::error(ErrorCode::InvalidValue, format!("corrupt_log: {e}")), e),
        };
        let env = self.project.env_config.env_id;
        let params = self.project.agent_params.clone();
        let preferred = self.project.agent_kind.unwrap_or(AgentKind::Bc);
        let result = match train_offline(&trial.events, env, preferred, &params) {
            Err(OfflineError::EmptyLog(_)) if preferred != AgentKind::Bc => {
                train_offline(&trial.events, env, AgentKind::Bc, &params)
            }
            other => other,
        };
        match result {
            Ok(snapshot) => {
                let kind = snapshot.agent.kind();
                self.agent = Some(snapshot.agent);
                let text = format!("offline training complete: {kind}");
                (ServerMessage::Info { text: text.clone() }, text)
            }
            Err(e) => (
                ServerMessage::error(ErrorCode::InvalidValue, format!("{e}")),
                e.to_string(),
            ),
        }
    }

    fn on_command(&mut self, action: ActionLabel, frame_id: u64, now: Instant) -> Vec<ServerMessage> {
        if matches!(self.state, SessionState::Created) {
            return vec![self.illegal("command")];
        }
        self.counters.commands += 1;
        self.record(now, EventPayload::Command { action, frame_id });
        if self.project.mode != InteractionMode::HumanControl {
            return vec![];
        }
        match self.env.action_spec().index_of(action) {
            Some(index) => {
                if matches!(self.state, SessionState::Running | SessionState::Paused) {
                    self.pending_command = Some(index);
                }
                vec![]
            }
            None => vec![ServerMessage::error(
                ErrorCode::InvalidValue,
                format!("action {action} is not available in {}", self.env.env_id()),
            )],
        }
    }

    fn on_feedback(&mut self, value: Feedback, frame_id: u64, now: Instant) -> Vec<ServerMessage> {
        if !matches!(self.state, SessionState::Running | SessionState::Paused) {
            return vec![self.illegal("feedback")];
        }
        if let Some(max) = self.project.budget_max {
            if self.budget_used >= max {
                return vec![ServerMessage::error(
                    ErrorCode::BudgetExhausted,
                    format!("feedback budget of {max} is used up"),
                )];
            }
        }
        let Some(attr) = self.recent.iter().find(|a| a.frame_id == frame_id) else {
            return vec![ServerMessage::error(
                ErrorCode::InvalidValue,
                format!("frameId {frame_id} is not among the last {ATTRIBUTION_WINDOW} frames"),
            )];
        };
        let Some((obs, action)) = attr.transition.clone() else {
            return vec![ServerMessage::error(
                ErrorCode::InvalidValue,
                format!("frame {frame_id} starts an episode; there is no action to credit"),
            )];
        };
        self.budget_used += 1;
        self.counters.feedback += 1;
        self.counters.budget_used = self.budget_used;
        let mut applied = false;
        if self.online_learning {
            if let Some(agent) = self.agent.as_mut() {
                applied = agent.feedback(&obs.features, action, value).unwrap_or(false);
            }
        }
        if applied {
            self.feedback_updates += 1;
            self.counters.feedback_applied += 1;
        }
        self.record(
            now,
            EventPayload::Feedback {
                value: value.value() as i64,
                frame_id,
                applied,
                budget_used: self.budget_used,
            },
        );
        match self.project.budget_max {
            Some(max) => vec![ServerMessage::BudgetUpdate {
                used: self.budget_used,
                max,
            }],
            None => vec![],
        }
    }

    fn start_next_episode(&mut self) {
        if let Some(agent) = self.agent.as_mut() {
            agent.end_episode();
        }
        self.env.reset(None);
        self.episode_return = 0.0;
        self.pending_command = None;
    }

    fn emit_frame(&mut self, transition: Option<TransitionRecord>, now: Instant) -> ServerMessage {
        self.last_frame_id += 1;
        let frame_id = self.last_frame_id;
        let obs = self.env.observation();
        let image = encode_png_base64(&self.env.render());
        if self.recent.len() == ATTRIBUTION_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(Attribution {
            frame_id,
            transition: transition
                .as_ref()
                .map(|t| (Observation::new(t.state_before.clone()), t.action)),
        });
        let expose = self.project.expose_observation || self.debug;
        let msg = FrameMessage {
            frame_id,
            image,
            episode: self.env.episode(),
            step: self.env.step_index(),
            score: self.episode_return,
            obs: expose.then(|| obs.features.clone()),
            action: if expose { transition.as_ref().map(|t| t.label) } else { None },
        };
        self.counters.frames += 1;
        self.record(
            now,
            EventPayload::FrameEmitted(FrameRecord {
                frame_id,
                episode: msg.episode,
                step: msg.step,
                score: msg.score,
                obs: obs.features,
                transition,
            }),
        );
        ServerMessage::Frame(msg)
    }

    /// Advances the environment by one step if a frame is due.
    ///
    /// The step that ends an episode is shown as its own frame. The tick after
    /// it resets the environment and shows the new start state, so every
    /// episode opens with a frame that carries no transition.
    pub fn tick(&mut self, now: Instant) -> Option<ServerMessage> {
        let due = self.next_tick_at()?;
        if now < due {
            return None;
        }
        let period = self.frame_period();
        let next = due + period;
        // fall back to the current instant when far behind rather than bursting
        self.next_tick = Some(if next + period < now { now + period } else { next });
        self.last_tick = Some(due);
        Some(self.step_once(now))
    }

    fn choose_action(&mut self, obs: &Observation) -> (usize, ActionSource) {
        let default = self.env.action_spec().default_action();
        match self.project.mode {
            InteractionMode::HumanControl => match self.pending_command.take() {
                Some(a) => (a, ActionSource::Human),
                None => (default, ActionSource::Default),
            },
            InteractionMode::AgentControlFeedback => match &self.agent {
                Some(agent) => match agent.act(&obs.features, &mut self.agent_rng) {
                    Ok(a) => (a, ActionSource::Agent),
                    Err(_) => (default, ActionSource::Default),
                },
                None => (default, ActionSource::Default),
            },
        }
    }

    fn step_once(&mut self, now: Instant) -> ServerMessage {
        if !self.env.is_running() {
            self.start_next_episode();
            return self.emit_frame(None, now);
        }
        let before = self.env.observation();
        let (action, source) = self.choose_action(&before);
        let result = match self.env.step(action) {
            Ok(r) => r,
            Err(_) => {
                // unreachable for a running environment with a validated action
                self.start_next_episode();
                return self.emit_frame(None, now);
            }
        };
        if source == ActionSource::Human {
            self.counters.executed_commands += 1;
        }
        self.episode_return += result.reward;
        if self.online_learning {
            if let Some(agent) = self.agent.as_mut() {
                let _ = agent.observe(
                    &before.features,
                    action,
                    result.reward,
                    &result.observation.features,
                    result.terminated,
                );
            }
        }
        let label = self
            .env
            .action_spec()
            .label(action)
            .unwrap_or(ActionLabel::Noop);
        let transition = TransitionRecord {
            state_before: before.features,
            action,
            label,
            source,
            reward: result.reward,
            done: result.done,
            terminated: result.terminated,
        };
        let frame = self.emit_frame(Some(transition), now);
        if result.done {
            let reason = if result.terminated { "goal" } else { "horizon" };
            self.record(
                now,
                EventPayload::EpisodeEnd {
                    episode: self.env.episode(),
                    steps: result.step_index,
                    total_return: self.episode_return,
                    reason: reason.into(),
                },
            );
            self.counters.episodes += 1;
        }
        frame
    }

    /// Ends the session if it has been idle too long or has run past its
    /// maximum length. Returns the closing message when it fires.
    pub fn check_timeout(&mut self, now: Instant) -> Option<ServerMessage> {
        if self.state == SessionState::Ended || now < self.timeout_deadline() {
            return None;
        }
        self.end(reason::TIMEOUT, now)
    }

    /// Ends the session for an external reason such as a dropped connection
    /// or server shutdown. No-op for an already ended session.
    pub fn terminate(&mut self, reason: &str, now: Instant) -> Option<ServerMessage> {
        self.end(reason, now)
    }

    fn end(&mut self, why: &str, now: Instant) -> Option<ServerMessage> {
        if self.state == SessionState::Ended {
            return None;
        }
        self.transition(SessionState::Ended);
        self.next_tick = None;
        self.end_reason = Some(why.to_string());
        if self.env.is_running() && self.env.step_index() > 0 {
            self.record(
                now,
                EventPayload::EpisodeEnd {
                    episode: self.env.episode(),
                    steps: self.env.step_index(),
                    total_return: self.episode_return,
                    reason: why.to_string(),
                },
            );
            self.counters.episodes += 1;
        }
        let (timestamp_ms, mono_ms) = self.stamp(now);
        let end = Event {
            timestamp_ms,
            mono_ms,
            session_id: self.id.clone(),
            payload: EventPayload::SessionEnd { reason: why.to_string() },
        };
        self.counters.events += 1;
        let meta = TrialMetadata {
            version: LOG_VERSION,
            session_id: self.id.clone(),
            project_id: self.project.project_id.clone(),
            user_id: self.user_id.clone(),
            reason: why.to_string(),
            started_at_ms: self.created_wall_ms,
            ended_at_ms: timestamp_ms,
            duration_ms: mono_ms,
            counters: self.counters.clone(),
        };
        if let Some(log) = self.log.take() {
            match log.finalize(&end, self.store.sink.as_ref(), &meta) {
                Ok(stored) => self.stored = Some(stored),
                Err(_) => self.counters.dropped_events += 1,
            }
        }
        Some(ServerMessage::SessionEnd {
            reason: why.to_string(),
            redirect: self.project.redirect.clone(),
        })
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if self.state != SessionState::Ended {
            self.end(reason::SERVER_SHUTDOWN, Instant::now());
        }
    }
}
