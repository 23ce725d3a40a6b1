//! Hard-coded programmatic teachers that stand in for human participants.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{grid_world, ActionLabel, EnvId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// Energy pumping: push in the direction of motion, left when at rest.
    McOracle,
    /// Right until the last column, then down.
    GridOracle,
    Random,
}

impl TeacherKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TeacherKind::McOracle => "mc_oracle",
            TeacherKind::GridOracle => "grid_oracle",
            TeacherKind::Random => "random",
        }
    }
}

impl fmt::Display for TeacherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TeacherKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mc_oracle" => Ok(TeacherKind::McOracle),
            "grid_oracle" => Ok(TeacherKind::GridOracle),
            "random" => Ok(TeacherKind::Random),
            other => Err(format!("unknown teacher {other:?}")),
        }
    }
}

pub fn mc_oracle(obs: &[f64]) -> ActionLabel {
    if obs[1] > 0.0 {
        ActionLabel::Right
    } else {
        ActionLabel::Left
    }
}

pub fn grid_oracle(obs: &[f64]) -> ActionLabel {
    let last = (grid_world::SIZE - 1) as f64;
    if obs[0] < last {
        ActionLabel::Right
    } else if obs[1] < last {
        ActionLabel::Down
    } else {
        ActionLabel::Noop
    }
}

#[derive(Debug, Clone)]
pub struct TeacherPolicy {
    kind: TeacherKind,
    rng: ChaCha8Rng,
}

impl TeacherPolicy {
    pub fn new(kind: TeacherKind, seed: u64) -> Self {
        TeacherPolicy {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn kind(&self) -> TeacherKind {
        self.kind
    }

    /// The teacher's action for `obs`. The random teacher draws uniformly
    /// from the environment's action set.
    pub fn choose(&mut self, env: EnvId, obs: &[f64]) -> ActionLabel {
        match self.kind {
            TeacherKind::McOracle => mc_oracle(obs),
            TeacherKind::GridOracle => grid_oracle(obs),
            TeacherKind::Random => *env
                .action_spec()
                .labels()
                .choose(&mut self.rng)
                .expect("non-empty action set"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, Environment};

    fn run_episode(env: &mut Environment, teacher: &mut TeacherPolicy, seed: Option<u64>) -> (u32, bool) {
        let mut obs = env.reset(seed);
        loop {
            let label = teacher.choose(env.env_id(), &obs.features);
            let a = env.action_spec().index_of(label).unwrap();
            let r = env.step(a).unwrap();
            obs = r.observation;
            if r.done {
                return (r.step_index, r.terminated);
            }
        }
    }

    #[test]
    fn mc_oracle_solves_every_start_under_200_steps() {
        let cfg = EnvConfig::new(EnvId::MountainCar, 0).with_horizon(10_000);
        for i in 0..100 {
            let x0 = -0.6 + 0.2 * i as f64 / 99.0;
            let mut env = Environment::new(cfg.clone()).unwrap();
            env.reset(None);
            // start the dynamics from the exact grid point
            let mut state = crate::env::MountainCar::new(x0, 0.0);
            let mut steps = 0;
            while state.position < crate::env::mountain_car::GOAL_POSITION {
                let a = env.action_spec().index_of(mc_oracle(&state.observation().features)).unwrap();
                let (x, v) = crate::env::mountain_car::dynamics(state.position, state.velocity, a);
                state = crate::env::MountainCar::new(x, v);
                steps += 1;
                assert!(steps < 200, "start {x0} needs more than 200 steps");
            }
        }
    }

    #[test]
    fn mc_oracle_through_environment() {
        let cfg = EnvConfig::new(EnvId::MountainCar, 9);
        let mut env = Environment::new(cfg).unwrap();
        let mut t = TeacherPolicy::new(TeacherKind::McOracle, 0);
        for _ in 0..20 {
            let (steps, reached) = run_episode(&mut env, &mut t, None);
            assert!(reached && steps < 200);
        }
    }

    #[test]
    fn grid_oracle_is_optimal() {
        let mut env = Environment::new(EnvConfig::new(EnvId::GridWorld, 0)).unwrap();
        let mut t = TeacherPolicy::new(TeacherKind::GridOracle, 0);
        assert_eq!(run_episode(&mut env, &mut t, None), (8, true));
    }

    #[test]
    fn random_teacher_sometimes_times_out_on_grid() {
        let cfg = EnvConfig::new(EnvId::GridWorld, 0).with_horizon(100);
        let mut env = Environment::new(cfg).unwrap();
        let mut t = TeacherPolicy::new(TeacherKind::Random, 1);
        let outcomes: Vec<bool> = (0..50).map(|_| run_episode(&mut env, &mut t, None).1).collect();
        assert!(outcomes.iter().any(|r| !r));
    }

    #[test]
    fn teacher_kinds_parse() {
        for k in [TeacherKind::McOracle, TeacherKind::GridOracle, TeacherKind::Random] {
            assert_eq!(k.as_str().parse::<TeacherKind>().unwrap(), k);
        }
    }
}
