//! Semi-gradient one-step Q-learning over tile features.

use rand::Rng;

use super::linear::{argmax, LinearWeights};
use super::{check_action, AgentError, TileCoder};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct QAgent {
    coder: TileCoder,
    q: LinearWeights,
    alpha: f64,
    gamma: f64,
    epsilon: f64,
}

impl QAgent {
    pub fn new(coder: TileCoder, actions: usize) -> Self {
        Self::with_params(coder, actions, DEFAULT_ALPHA, DEFAULT_GAMMA, DEFAULT_EPSILON)
    }

    pub fn with_params(coder: TileCoder, actions: usize, alpha: f64, gamma: f64, epsilon: f64) -> Self {
        let q = LinearWeights::zeros(actions, coder.feature_count());
        QAgent {
            coder,
            q,
            alpha,
            gamma,
            epsilon,
        }
    }

    pub(crate) fn from_parts(coder: TileCoder, q: LinearWeights, alpha: f64, gamma: f64, epsilon: f64) -> Self {
        QAgent {
            coder,
            q,
            alpha,
            gamma,
            epsilon,
        }
    }

    pub fn coder(&self) -> &TileCoder {
        &self.coder
    }

    pub fn weights(&self) -> &LinearWeights {
        &self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        let active = self.coder.tile_features(obs)?;
        Ok(self.q.values(&active))
    }

    pub fn greedy(&self, obs: &[f64]) -> Result<usize, AgentError> {
        Ok(argmax(&self.q_values(obs)?))
    }

    /// Epsilon-greedy; exploration draws uniformly over all actions.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<usize, AgentError> {
        let greedy = self.greedy(obs)?;
        if rng.random::<f64>() < self.epsilon {
            Ok(rng.random_range(0..self.q.actions()))
        } else {
            Ok(greedy)
        }
    }

    /// `target = r + (terminal ? 0 : gamma * max_a' q(s', a'))`, and each
    /// active weight of `action` moves by `alpha / numTilings * (target - q(s, a))`.
    pub fn update(
        &mut self,
        obs: &[f64],
        action: usize,
        reward: f64,
        next: &[f64],
        terminal: bool,
    ) -> Result<(), AgentError> {
        check_action(action, self.q.actions())?;
        let active = self.coder.tile_features(obs)?;
        let bootstrap = if terminal {
            0.0
        } else {
            let next_active = self.coder.tile_features(next)?;
            self.q
                .values(&next_active)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let target = reward + self.gamma * bootstrap;
        let error = target - self.q.value(action, &active);
        let step = self.alpha / self.coder.num_tilings() as f64;
        self.q.add(action, &active, step * error);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvId;

    const S: [f64; 2] = [-0.5, 0.0];

    #[test]
    fn terminal_update_by_hand() {
        let mut a = QAgent::new(TileCoder::for_env(EnvId::MountainCar), 3);
        a.update(&S, 1, -1.0, &S, true).unwrap();
        let active = a.coder().tile_features(&S).unwrap();
        for &i in &active {
            assert!((a.weights().row(1)[i] + 0.0125).abs() < 1e-15);
        }
        assert!((a.q_values(&S).unwrap()[1] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn bootstrapped_target() {
        let mut a = QAgent::with_params(TileCoder::for_env(EnvId::GridWorld), 5, 0.5, 0.9, 0.0);
        let next = [1.0, 0.0];
        a.update(&next, 3, -1.0, &next, true).unwrap(); // q(next, right) = -0.5
        a.update(&[0.0, 0.0], 3, -1.0, &next, false).unwrap();
        // max over next is 0 (untried actions), target -1, step 0.5
        assert!((a.q_values(&[0.0, 0.0]).unwrap()[3] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_error_no_change() {
        let mut a = QAgent::new(TileCoder::for_env(EnvId::MountainCar), 3);
        let before = a.weights().clone();
        a.update(&S, 0, 0.0, &S, false).unwrap();
        assert_eq!(&before, a.weights());
    }
}
