//! Learners trained in-process against the oracle teachers.

use hitl_core::agents::{Agent, AgentKind, AgentParams, Feedback};
use hitl_core::env::{EnvConfig, EnvId, Environment};
use hitl_core::teacher::mc_oracle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Steps per episode for a learner receiving oracle feedback on every step.
fn feedback_curve(kind: AgentKind, params: &AgentParams, seed: u64, episodes: usize, horizon: u32) -> Vec<u32> {
    let mut env = Environment::new(EnvConfig::new(EnvId::MountainCar, seed).with_horizon(horizon)).unwrap();
    let mut agent = Agent::new(kind, EnvId::MountainCar, params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let spec = env.action_spec().clone();
    let mut steps = Vec::new();
    for _ in 0..episodes {
        let mut obs = env.reset(None);
        loop {
            let a = agent.act(&obs.features, &mut rng).unwrap();
            let want = spec.index_of(mc_oracle(&obs.features)).unwrap();
            let f = if a == want { Feedback::Good } else { Feedback::Bad };
            agent.feedback(&obs.features, a, f).unwrap();
            let r = env.step(a).unwrap();
            obs = r.observation;
            if r.done {
                steps.push(r.step_index);
                agent.end_episode();
                break;
            }
        }
    }
    steps
}

fn mean(xs: &[u32]) -> f64 {
    xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64
}

fn oracle_steps(seed: u64, episodes: usize, horizon: u32) -> Vec<u32> {
    let mut env = Environment::new(EnvConfig::new(EnvId::MountainCar, seed).with_horizon(horizon)).unwrap();
    let spec = env.action_spec().clone();
    let mut steps = Vec::new();
    for _ in 0..episodes {
        let mut obs = env.reset(None);
        loop {
            let r = env.step(spec.index_of(mc_oracle(&obs.features)).unwrap()).unwrap();
            obs = r.observation;
            if r.done {
                steps.push(r.step_index);
                break;
            }
        }
    }
    steps
}

#[test]
fn tamer_reaches_oracle_parity_within_the_first_episode() {
    for seed in 0..10 {
        let tamer = feedback_curve(AgentKind::Tamer, &AgentParams::default(), seed, 30, 200);
        assert!(tamer.iter().all(|&s| s < 200), "seed {seed}: {tamer:?}");
        // same start states as the oracle run; the learner is never far from it
        let oracle = oracle_steps(seed, 30, 200);
        let worst = tamer.iter().zip(&oracle).map(|(&t, &o)| t as i64 - o as i64).max().unwrap();
        assert!(worst < 70, "seed {seed}: tamer {tamer:?} oracle {oracle:?}");
    }
}

#[test]
fn coach_improves_on_every_seed() {
    for seed in 0..10 {
        let c = feedback_curve(AgentKind::Coach, &AgentParams::default(), seed, 30, 200);
        let (early, late) = (mean(&c[..10]), mean(&c[20..]));
        assert!(late < early && late < 200.0, "seed {seed}: {c:?}");
    }
}
