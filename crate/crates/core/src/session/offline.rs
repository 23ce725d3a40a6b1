//! Training a learner from a recorded trial.

use std::collections::HashMap;

use thiserror::Error;

use crate::agents::{bc, Agent, AgentError, AgentKind, AgentParams, AgentSnapshot, BcPolicy, Feedback, TileCoder};
use crate::env::EnvId;
use crate::recorder::{demo_dataset, Event, EventPayload, FrameRecord, TransitionRecord};

/// Passes over the recorded transitions for Q-learning.
pub const Q_REPLAY_EPOCHS: usize = 10;

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error("empty_log: the trial holds nothing a {0} learner can train on")]
    EmptyLog(AgentKind),
    #[error("log does not match the {env} environment: {source}")]
    Mismatch {
        env: EnvId,
        #[source]
        source: AgentError,
    },
}

fn transitions(events: &[Event]) -> impl Iterator<Item = (u64, &TransitionRecord)> {
    events.iter().filter_map(|e| match &e.payload {
        EventPayload::FrameEmitted(FrameRecord {
            frame_id,
            transition: Some(t),
            ..
        }) => Some((*frame_id, t)),
        _ => None,
    })
}

/// Trains a fresh `kind` learner from `events`.
///
/// Behavioural cloning fits the human-sourced transitions. TAMER and COACH
/// replay every applied or unapplied feedback event against the transition of
/// the frame it names, in log order. Q-learning replays every transition.
pub fn train_offline(
    events: &[Event],
    env: EnvId,
    kind: AgentKind,
    params: &AgentParams,
) -> Result<AgentSnapshot, OfflineError> {
    let mismatch = |source| OfflineError::Mismatch { env, source };
    let mut agent = Agent::new(kind, env, params);
    match kind {
        AgentKind::Bc => {
            let data = demo_dataset(events);
            if data.is_empty() {
                return Err(OfflineError::EmptyLog(kind));
            }
            let actions = env.action_spec().count();
            let policy =
                BcPolicy::fit(&data, TileCoder::for_env(env), actions, bc::DEFAULT_EPOCHS).map_err(mismatch)?;
            agent = Agent::Bc(policy);
        }
        AgentKind::Tamer | AgentKind::Coach => {
            let by_frame: HashMap<u64, &TransitionRecord> = transitions(events).collect();
            let mut used = 0usize;
            for e in events {
                if let EventPayload::Feedback { value, frame_id, .. } = &e.payload {
                    let (Some(t), Some(f)) = (by_frame.get(frame_id), Feedback::from_sign(*value)) else {
                        continue;
                    };
                    agent.feedback(&t.state_before, t.action, f).map_err(mismatch)?;
                    used += 1;
                }
                if let EventPayload::EpisodeEnd { .. } = e.payload {
                    agent.end_episode();
                }
            }
            if used == 0 {
                return Err(OfflineError::EmptyLog(kind));
            }
        }
        AgentKind::Qlearning => {
            let mut replay = Vec::new();
            for e in events {
                if let EventPayload::FrameEmitted(FrameRecord {
                    obs,
                    transition: Some(t),
                    ..
                }) = &e.payload
                {
                    replay.push((t, obs));
                }
            }
            if replay.is_empty() {
                return Err(OfflineError::EmptyLog(kind));
            }
            for _ in 0..Q_REPLAY_EPOCHS {
                for (t, next) in &replay {
                    agent
                        .observe(&t.state_before, t.action, t.reward, next, t.terminated)
                        .map_err(mismatch)?;
                }
            }
        }
    }
    Ok(AgentSnapshot::new(env, agent))
}
