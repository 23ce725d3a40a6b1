//! Discrete-action episodic environments with seeded dynamics and a flat-color
//! raster renderer.
//!
//! Two environments are built in: the classic Mountain Car task and a 5x5
//! deterministic GridWorld. Both charge a reward of -1 per step, so the
//! number of steps to the goal is the learning metric everywhere.

mod frame;
pub mod grid_world;
pub mod mountain_car;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use frame::{Frame, FrameEncodeError};
pub use grid_world::GridWorld;
pub use mountain_car::MountainCar;

pub const DEFAULT_RENDER_WIDTH: u32 = 320;
pub const DEFAULT_RENDER_HEIGHT: u32 = 240;
pub const DEFAULT_HORIZON: u32 = 200;
pub const MIN_RENDER_DIM: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("episode is not running; call reset first")]
    EpisodeDone,
    #[error("action index {action} out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("observation has {got} components, expected {expected}")]
    ObservationDim { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    MountainCar,
    GridWorld,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::MountainCar => "mountain_car",
            EnvId::GridWorld => "grid_world",
        }
    }

    pub fn action_spec(self) -> ActionSpec {
        match self {
            EnvId::MountainCar => ActionSpec::new(&MountainCar::ACTIONS),
            EnvId::GridWorld => ActionSpec::new(&GridWorld::ACTIONS),
        }
    }

    /// Per-dimension `[low, high]` bounds of the observation vector.
    pub fn observation_bounds(self) -> Vec<(f64, f64)> {
        match self {
            EnvId::MountainCar => vec![
                (mountain_car::MIN_POSITION, mountain_car::MAX_POSITION),
                (-mountain_car::MAX_SPEED, mountain_car::MAX_SPEED),
            ],
            EnvId::GridWorld => {
                let hi = (grid_world::SIZE - 1) as f64;
                vec![(0.0, hi), (0.0, hi)]
            }
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mountain_car" => Ok(EnvId::MountainCar),
            "grid_world" => Ok(EnvId::GridWorld),
            other => Err(format!("unknown envId {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnvConfig {
    pub env_id: EnvId,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default = "default_width")]
    pub render_width: u32,
    #[serde(default = "default_height")]
    pub render_height: u32,
}

fn default_horizon() -> u32 {
    DEFAULT_HORIZON
}
fn default_width() -> u32 {
    DEFAULT_RENDER_WIDTH
}
fn default_height() -> u32 {
    DEFAULT_RENDER_HEIGHT
}

impl EnvConfig {
    pub fn new(env_id: EnvId, seed: u64) -> Self {
        EnvConfig {
            env_id,
            seed,
            horizon: DEFAULT_HORIZON,
            render_width: DEFAULT_RENDER_WIDTH,
            render_height: DEFAULT_RENDER_HEIGHT,
        }
    }

    pub fn with_horizon(mut self, horizon: u32) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_render_size(mut self, width: u32, height: u32) -> Self {
        self.render_width = width;
        self.render_height = height;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon < 1 {
            return Err(EnvError::InvalidConfig("horizon must be >= 1".into()));
        }
        if self.render_width < MIN_RENDER_DIM || self.render_height < MIN_RENDER_DIM {
            return Err(EnvError::InvalidConfig(format!(
                "render size {}x{} below the {MIN_RENDER_DIM}x{MIN_RENDER_DIM} minimum",
                self.render_width, self.render_height
            )));
        }
        Ok(())
    }
}

/// Environment-facing state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation {
    pub features: Vec<f64>,
}

impl Observation {
    pub fn new(features: Vec<f64>) -> Self {
        Observation { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

impl From<Vec<f64>> for Observation {
    fn from(features: Vec<f64>) -> Self {
        Observation { features }
    }
}

/// The UI action vocabulary shared with the wire protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionLabel {
    Left,
    Right,
    Up,
    Down,
    Fire,
    Noop,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; 6] = [
        ActionLabel::Left,
        ActionLabel::Right,
        ActionLabel::Up,
        ActionLabel::Down,
        ActionLabel::Fire,
        ActionLabel::Noop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionLabel::Left => "left",
            ActionLabel::Right => "right",
            ActionLabel::Up => "up",
            ActionLabel::Down => "down",
            ActionLabel::Fire => "fire",
            ActionLabel::Noop => "noop",
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpec {
    labels: Vec<ActionLabel>,
}

impl ActionSpec {
    pub fn new(labels: &[ActionLabel]) -> Self {
        debug_assert!(
            labels
                .iter()
                .enumerate()
                .all(|(i, l)| !labels[..i].contains(l)),
            "action labels must be distinct"
        );
        ActionSpec {
            labels: labels.to_vec(),
        }
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[ActionLabel] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Option<ActionLabel> {
        self.labels.get(index).copied()
    }

    pub fn index_of(&self, label: ActionLabel) -> Option<usize> {
        self.labels.iter().position(|l| *l == label)
    }

    /// Action executed when nobody chose one.
    pub fn default_action(&self) -> usize {
        self.index_of(ActionLabel::Noop).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// Episode over, either at the goal or at the horizon.
    pub done: bool,
    /// Goal reached. `done && !terminated` means the horizon truncated the episode.
    pub terminated: bool,
    pub step_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
enum Dynamics {
    MountainCar(MountainCar),
    GridWorld(GridWorld),
}

/// A single running environment instance. Owned by one session.
#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    actions: ActionSpec,
    rng: ChaCha8Rng,
    dynamics: Dynamics,
    step_index: u32,
    episode: u64,
    running: bool,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let dynamics = match config.env_id {
            EnvId::MountainCar => Dynamics::MountainCar(MountainCar::default()),
            EnvId::GridWorld => Dynamics::GridWorld(GridWorld::default()),
        };
        Ok(Environment {
            actions: config.env_id.action_spec(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            dynamics,
            step_index: 0,
            episode: 0,
            running: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn env_id(&self) -> EnvId {
        self.config.env_id
    }

    pub fn action_spec(&self) -> &ActionSpec {
        &self.actions
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn step_index(&self) -> u32 {
        self.step_index
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    /// Starts a new episode. `Some(seed)` reseeds the start-state generator
    /// first; `None` continues the current stream, so a sequence of resets
    /// from one seeded environment is itself reproducible.
    pub fn reset(&mut self, seed: Option<u64>) -> Observation {
        if let Some(seed) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(seed);
        }
        match &mut self.dynamics {
            Dynamics::MountainCar(mc) => {
                let x = self
                    .rng
                    .random_range(mountain_car::START_LOW..=mountain_car::START_HIGH);
                *mc = MountainCar::new(x, 0.0);
            }
            Dynamics::GridWorld(g) => *g = GridWorld::default(),
        }
        self.step_index = 0;
        self.episode += 1;
        self.running = true;
        self.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if !self.running {
            return Err(EnvError::EpisodeDone);
        }
        if action >= self.actions.count() {
            return Err(EnvError::InvalidAction {
                action,
                count: self.actions.count(),
            });
        }
        let terminated = match &mut self.dynamics {
            Dynamics::MountainCar(mc) => mc.step(action),
            Dynamics::GridWorld(g) => g.step(action),
        };
        self.step_index += 1;
        let done = terminated || self.step_index >= self.config.horizon;
        if done {
            self.running = false;
        }
        Ok(StepResult {
            observation: self.observation(),
            reward: -1.0,
            done,
            terminated,
            step_index: self.step_index,
        })
    }

    pub fn observation(&self) -> Observation {
        match &self.dynamics {
            Dynamics::MountainCar(mc) => mc.observation(),
            Dynamics::GridWorld(g) => g.observation(),
        }
    }

    pub fn render(&self) -> Frame {
        let (w, h) = (self.config.render_width, self.config.render_height);
        match &self.dynamics {
            Dynamics::MountainCar(mc) => mc.render(w, h),
            Dynamics::GridWorld(g) => g.render(w, h),
        }
    }

    /// Renders an arbitrary observation without touching any live instance.
    /// Used to re-render recorded trials.
    pub fn render_observation(config: &EnvConfig, obs: &Observation) -> Result<Frame, EnvError> {
        if obs.len() != 2 {
            return Err(EnvError::ObservationDim {
                got: obs.len(),
                expected: 2,
            });
        }
        let (w, h) = (config.render_width, config.render_height);
        let f = &obs.features;
        Ok(match config.env_id {
            EnvId::MountainCar => MountainCar::new(f[0], f[1]).render(w, h),
            EnvId::GridWorld => GridWorld::at(f[0] as i32, f[1] as i32).render(w, h),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mountain_car_reset_is_seed_deterministic() {
        let mut env = Environment::new(EnvConfig::new(EnvId::MountainCar, 0)).unwrap();
        let a = env.reset(Some(42));
        let b = env.reset(Some(42));
        assert_eq!(a, b);
        assert_eq!(env.episode(), 2);
    }

    #[test]
    fn mountain_car_reset_range() {
        let mut env = Environment::new(EnvConfig::new(EnvId::MountainCar, 0)).unwrap();
        let obs = env.reset(Some(7));
        assert!((-0.6..=-0.4).contains(&obs.features[0]));
        assert_eq!(obs.features[1], 0.0);
        assert_eq!(env.step_index(), 0);
    }

    #[test]
    fn grid_reset_starts_at_origin() {
        for seed in [0, 1, 99] {
            let mut env = Environment::new(EnvConfig::new(EnvId::GridWorld, 5)).unwrap();
            assert_eq!(env.reset(Some(seed)).features, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn grid_step_right() {
        let mut env = Environment::new(EnvConfig::new(EnvId::GridWorld, 0)).unwrap();
        env.reset(None);
        let right = env.action_spec().index_of(ActionLabel::Right).unwrap();
        let r = env.step(right).unwrap();
        assert_eq!(r.observation.features, vec![1.0, 0.0]);
        assert_eq!(r.reward, -1.0);
        assert!(!r.done);
        assert_eq!(r.step_index, 1);
    }

    #[test]
    fn stepping_done_episode_is_an_error() {
        let cfg = EnvConfig::new(EnvId::GridWorld, 0).with_horizon(1);
        let mut env = Environment::new(cfg).unwrap();
        assert_eq!(env.step(0), Err(EnvError::EpisodeDone));
        env.reset(None);
        let r = env.step(0).unwrap();
        assert!(r.done && !r.terminated);
        assert_eq!(env.step(0), Err(EnvError::EpisodeDone));
    }

    #[test]
    fn invalid_action_rejected() {
        let mut env = Environment::new(EnvConfig::new(EnvId::MountainCar, 0)).unwrap();
        env.reset(None);
        assert_eq!(
            env.step(3),
            Err(EnvError::InvalidAction {
                action: 3,
                count: 3
            })
        );
    }

    #[test]
    fn config_validation() {
        assert!(EnvConfig::new(EnvId::GridWorld, 0)
            .with_horizon(0)
            .validate()
            .is_err());
        assert!(EnvConfig::new(EnvId::GridWorld, 0)
            .with_render_size(31, 240)
            .validate()
            .is_err());
        assert!(EnvConfig::new(EnvId::GridWorld, 0)
            .with_render_size(32, 32)
            .validate()
            .is_ok());
    }

    #[test]
    fn default_render_size() {
        let mut env = Environment::new(EnvConfig::new(EnvId::MountainCar, 3)).unwrap();
        env.reset(None);
        let f = env.render();
        assert_eq!((f.width, f.height), (320, 240));
        assert_eq!(f.pixels.len(), 230_400);
        assert_eq!(f, env.render());
    }

    #[test]
    fn action_labels_parse() {
        for l in ActionLabel::ALL {
            assert_eq!(l.as_str().parse::<ActionLabel>().unwrap(), l);
        }
        assert!("jump".parse::<ActionLabel>().is_err());
    }
}
