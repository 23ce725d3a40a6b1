//! TAMER: regress a model of the teacher's reinforcement and act greedily on it.

use serde::{Deserialize, Serialize};

use super::linear::{argmax, LinearWeights};
use super::{check_action, AgentError, Feedback, TileCoder};

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Credit assignment for a feedback signal. Only the most recent transition is
/// credited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditMode {
    #[default]
    LastAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TamerAgent {
    coder: TileCoder,
    hhat: LinearWeights,
    alpha: f64,
    credit: CreditMode,
}

impl TamerAgent {
    pub fn new(coder: TileCoder, actions: usize) -> Self {
        Self::with_alpha(coder, actions, DEFAULT_ALPHA)
    }

    pub fn with_alpha(coder: TileCoder, actions: usize, alpha: f64) -> Self {
        let hhat = LinearWeights::zeros(actions, coder.feature_count());
        TamerAgent {
            coder,
            hhat,
            alpha,
            credit: CreditMode::LastAction,
        }
    }

    pub(crate) fn from_parts(coder: TileCoder, hhat: LinearWeights, alpha: f64) -> Self {
        TamerAgent {
            coder,
            hhat,
            alpha,
            credit: CreditMode::LastAction,
        }
    }

    pub fn coder(&self) -> &TileCoder {
        &self.coder
    }

    pub fn weights(&self) -> &LinearWeights {
        &self.hhat
    }

    pub fn weights_mut(&mut self) -> &mut LinearWeights {
        &mut self.hhat
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn credit_mode(&self) -> CreditMode {
        self.credit
    }

    /// Estimated human reinforcement for taking `action` in `obs`.
    pub fn predict(&self, obs: &[f64], action: usize) -> Result<f64, AgentError> {
        check_action(action, self.hhat.actions())?;
        let active = self.coder.tile_features(obs)?;
        Ok(self.hhat.value(action, &active))
    }

    /// Delta rule: every active weight of `action` moves by
    /// `alpha / numTilings * (h - H(s, a))`.
    pub fn update(&mut self, obs: &[f64], action: usize, h: Feedback) -> Result<(), AgentError> {
        check_action(action, self.hhat.actions())?;
        let active = self.coder.tile_features(obs)?;
        let error = h.value() - self.hhat.value(action, &active);
        let step = self.alpha / self.coder.num_tilings() as f64;
        self.hhat.add(action, &active, step * error);
        Ok(())
    }

    pub fn act(&self, obs: &[f64]) -> Result<usize, AgentError> {
        let active = self.coder.tile_features(obs)?;
        Ok(argmax(&self.hhat.values(&active)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvId;

    fn agent() -> TamerAgent {
        TamerAgent::new(TileCoder::for_env(EnvId::MountainCar), 3)
    }

    const S: [f64; 2] = [-0.5, 0.01];

    #[test]
    fn first_positive_update() {
        let mut a = agent();
        a.update(&S, 1, Feedback::Good).unwrap();
        let active = a.coder().tile_features(&S).unwrap();
        for &i in &active {
            assert_eq!(a.weights().row(1)[i], 0.0625);
        }
        assert_eq!(a.predict(&S, 1).unwrap(), 0.5);
        assert_eq!(a.weights().row(0).iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn zero_error_is_a_fixed_point() {
        let mut a = agent();
        a.update(&S, 2, Feedback::Good).unwrap();
        // drive H(s,a) to exactly +1 by hand, then +1 feedback must not move it
        let active = a.coder().tile_features(&S).unwrap();
        for &i in &active {
            a.weights_mut().row_mut(2)[i] = 0.125;
        }
        let before = a.weights().clone();
        a.update(&S, 2, Feedback::Good).unwrap();
        assert_eq!(&before, a.weights());
    }

    #[test]
    fn repeated_good_converges_monotonically() {
        // H_{n+1} = H_n + alpha * (1 - H_n)  =>  1 - H_n = (1 - alpha)^n
        let mut a = agent();
        let mut prev = 0.0;
        for n in 1..=30 {
            a.update(&S, 0, Feedback::Good).unwrap();
            let h = a.predict(&S, 0).unwrap();
            assert!(h > prev && h <= 1.0);
            assert!((1.0 - h - 0.5f64.powi(n)).abs() < 1e-12);
            prev = h;
        }
    }

    #[test]
    fn act_ties_and_dominance() {
        let mut a = agent();
        assert_eq!(a.act(&S).unwrap(), 0);
        a.update(&S, 2, Feedback::Good).unwrap();
        assert_eq!(a.act(&S).unwrap(), 2);
    }

    #[test]
    fn permuting_rows_swaps_argmax() {
        let mut a = agent();
        a.update(&S, 2, Feedback::Good).unwrap();
        a.update(&S, 0, Feedback::Bad).unwrap();
        assert_eq!(a.act(&S).unwrap(), 2);
        let w = a.weights_mut();
        let r0 = w.row(0).to_vec();
        let r2 = w.row(2).to_vec();
        w.row_mut(0).copy_from_slice(&r2);
        w.row_mut(2).copy_from_slice(&r0);
        assert_eq!(a.act(&S).unwrap(), 0);
    }
}
