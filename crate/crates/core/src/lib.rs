//! Core of a human-in-the-loop reinforcement-learning experiment platform.
//!
//! Everything here is synchronous and transport-agnostic: the environments,
//! the tile-coded learners, the JSON wire vocabulary, trial recording, and the
//! per-participant session state machine. The websocket server and the
//! simulated teacher live in `hitl-cli` and drive these types.

pub mod agents;
pub mod config;
pub mod env;
pub mod protocol;
pub mod recorder;
pub mod session;
pub mod teacher;

pub use agents::{
    Agent, AgentKind, BcPolicy, CoachAgent, DemoDataset, LinearWeights, QAgent, TamerAgent,
    TileCoder,
};
pub use env::{ActionLabel, ActionSpec, EnvConfig, EnvId, Environment, Frame, Observation, StepResult};
pub use protocol::{ClientMessage, ErrorCode, ServerMessage};
pub use session::{ProjectConfig, Session};

