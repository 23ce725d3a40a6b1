//! Behavioral cloning: a one-vs-all perceptron over tile features that
//! predicts which action the demonstrator would take.

use serde::{Deserialize, Serialize};

use super::linear::{argmax, LinearWeights};
use super::{check_action, AgentError, TileCoder};
use crate::env::Observation;

pub const DEFAULT_EPOCHS: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemoDataset {
    pub pairs: Vec<(Observation, usize)>,
}

impl DemoDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, obs: Observation, action: usize) {
        self.pairs.push((obs, action));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcPolicy {
    coder: TileCoder,
    scores: LinearWeights,
}

impl BcPolicy {
    pub fn untrained(coder: TileCoder, actions: usize) -> Self {
        let scores = LinearWeights::zeros(actions, coder.feature_count());
        BcPolicy { coder, scores }
    }

    pub(crate) fn from_parts(coder: TileCoder, scores: LinearWeights) -> Self {
        BcPolicy { coder, scores }
    }

    /// Trains for a fixed number of epochs, visiting pairs in dataset order.
    /// For each pair and each action `c`, the label is `+1` for the
    /// demonstrated action and `-1` otherwise; a class whose score has the
    /// wrong sign (or is zero) moves its active weights toward the label.
    pub fn fit(
        dataset: &DemoDataset,
        coder: TileCoder,
        actions: usize,
        epochs: usize,
    ) -> Result<Self, AgentError> {
        if dataset.is_empty() {
            return Err(AgentError::EmptyDataset);
        }
        let encoded = dataset
            .pairs
            .iter()
            .map(|(obs, a)| {
                check_action(*a, actions)?;
                Ok((coder.tile_features(&obs.features)?, *a))
            })
            .collect::<Result<Vec<_>, AgentError>>()?;
        let mut policy = BcPolicy::untrained(coder, actions);
        let step = 1.0 / policy.coder.num_tilings() as f64;
        for _ in 0..epochs {
            for (active, a) in &encoded {
                for c in 0..actions {
                    let label = if c == *a { 1.0 } else { -1.0 };
                    if label * policy.scores.value(c, active) <= 0.0 {
                        policy.scores.add(c, active, label * step);
                    }
                }
            }
        }
        Ok(policy)
    }

    pub fn coder(&self) -> &TileCoder {
        &self.coder
    }

    pub fn weights(&self) -> &LinearWeights {
        &self.scores
    }

    pub fn weights_mut(&mut self) -> &mut LinearWeights {
        &mut self.scores
    }

    pub fn predict(&self, obs: &[f64]) -> Result<usize, AgentError> {
        let active = self.coder.tile_features(obs)?;
        Ok(argmax(&self.scores.values(&active)))
    }

    pub fn accuracy(&self, dataset: &DemoDataset) -> Result<f64, AgentError> {
        if dataset.is_empty() {
            return Err(AgentError::EmptyDataset);
        }
        let mut hits = 0usize;
        for (obs, a) in &dataset.pairs {
            if self.predict(&obs.features)? == *a {
                hits += 1;
            }
        }
        Ok(hits as f64 / dataset.len() as f64)
    }
}
