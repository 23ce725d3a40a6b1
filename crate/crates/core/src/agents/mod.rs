//! Tile-coded linear learners.
//!
//! All four learners share [`TileCoder`] features and [`LinearWeights`]
//! storage. Learning rates are given per update and divided by the number of
//! tilings internally, so a default stays stable when the tiling count
//! changes. Every argmax breaks ties toward the lowest action index.

pub mod bc;
pub mod coach;
mod linear;
pub mod qlearning;
mod snapshot;
pub mod tamer;
pub mod tile_coding;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bc::{BcPolicy, DemoDataset};
pub use coach::CoachAgent;
pub use linear::{argmax, LinearWeights};
pub use qlearning::QAgent;
pub use snapshot::{AgentSnapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use tamer::{CreditMode, TamerAgent};
pub use tile_coding::TileCoder;

use crate::env::EnvId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("observation has {got} components, coder expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("action index {action} out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("demonstration dataset is empty")]
    EmptyDataset,
    #[error("invalid tile coder: {0}")]
    InvalidCoder(String),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
}

pub(crate) fn check_action(action: usize, count: usize) -> Result<(), AgentError> {
    if action < count {
        Ok(())
    } else {
        Err(AgentError::InvalidAction { action, count })
    }
}

/// Binary teacher feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feedback {
    Good,
    Bad,
}

impl Feedback {
    pub fn value(self) -> f64 {
        match self {
            Feedback::Good => 1.0,
            Feedback::Bad => -1.0,
        }
    }

    pub fn from_sign(value: i64) -> Option<Self> {
        match value {
            1 => Some(Feedback::Good),
            -1 => Some(Feedback::Bad),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Tamer,
    Coach,
    Qlearning,
    Bc,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Tamer => "tamer",
            AgentKind::Coach => "coach",
            AgentKind::Qlearning => "qlearning",
            AgentKind::Bc => "bc",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tamer" => Ok(AgentKind::Tamer),
            "coach" => Ok(AgentKind::Coach),
            "qlearning" => Ok(AgentKind::Qlearning),
            "bc" => Ok(AgentKind::Bc),
            other => Err(format!("unknown agent kind {other:?}")),
        }
    }
}

/// Optional hyperparameter overrides. Unset fields take the learner defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AgentParams {
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub temperature: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
}

/// Any learner a session can host.
#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    Tamer(TamerAgent),
    Coach(CoachAgent),
    QLearning(QAgent),
    Bc(BcPolicy),
}

impl Agent {
    pub fn new(kind: AgentKind, env: EnvId, params: &AgentParams) -> Self {
        let coder = TileCoder::for_env(env);
        let actions = env.action_spec().count();
        match kind {
            AgentKind::Tamer => Agent::Tamer(TamerAgent::with_alpha(
                coder,
                actions,
                params.alpha.unwrap_or(tamer::DEFAULT_ALPHA),
            )),
            AgentKind::Coach => Agent::Coach(CoachAgent::with_params(
                coder,
                actions,
                params.alpha.unwrap_or(coach::DEFAULT_ALPHA),
                params.lambda.unwrap_or(coach::DEFAULT_LAMBDA),
                params.temperature.unwrap_or(coach::DEFAULT_TEMPERATURE),
            )),
            AgentKind::Qlearning => Agent::QLearning(QAgent::with_params(
                coder,
                actions,
                params.alpha.unwrap_or(qlearning::DEFAULT_ALPHA),
                params.gamma.unwrap_or(qlearning::DEFAULT_GAMMA),
                params.epsilon.unwrap_or(qlearning::DEFAULT_EPSILON),
            )),
            AgentKind::Bc => Agent::Bc(BcPolicy::untrained(coder, actions)),
        }
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            Agent::Tamer(_) => AgentKind::Tamer,
            Agent::Coach(_) => AgentKind::Coach,
            Agent::QLearning(_) => AgentKind::Qlearning,
            Agent::Bc(_) => AgentKind::Bc,
        }
    }

    pub fn weights(&self) -> &LinearWeights {
        match self {
            Agent::Tamer(a) => a.weights(),
            Agent::Coach(a) => a.weights(),
            Agent::QLearning(a) => a.weights(),
            Agent::Bc(a) => a.weights(),
        }
    }

    pub fn coder(&self) -> &TileCoder {
        match self {
            Agent::Tamer(a) => a.coder(),
            Agent::Coach(a) => a.coder(),
            Agent::QLearning(a) => a.coder(),
            Agent::Bc(a) => a.coder(),
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<usize, AgentError> {
        match self {
            Agent::Tamer(a) => a.act(obs),
            Agent::Coach(a) => a.act(obs, rng),
            Agent::QLearning(a) => a.act(obs, rng),
            Agent::Bc(a) => a.predict(obs),
        }
    }

    /// Applies teacher feedback for `(obs, action)`. Returns whether this
    /// learner consumes feedback at all.
    pub fn feedback(&mut self, obs: &[f64], action: usize, f: Feedback) -> Result<bool, AgentError> {
        match self {
            Agent::Tamer(a) => a.update(obs, action, f).map(|_| true),
            Agent::Coach(a) => a.update(obs, action, f).map(|_| true),
            Agent::QLearning(_) | Agent::Bc(_) => Ok(false),
        }
    }

    /// Applies an environment transition. Only Q-learning uses it.
    pub fn observe(
        &mut self,
        obs: &[f64],
        action: usize,
        reward: f64,
        next: &[f64],
        terminal: bool,
    ) -> Result<bool, AgentError> {
        match self {
            Agent::QLearning(a) => a.update(obs, action, reward, next, terminal).map(|_| true),
            _ => Ok(false),
        }
    }

    pub fn end_episode(&mut self) {
        if let Agent::Coach(a) = self {
            a.end_episode();
        }
    }
}
